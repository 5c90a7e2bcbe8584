#pragma once

#include <Eigen/Dense>

namespace staci {

/// One SVGD particle: every trainable coordinate in a flat vector, plus any
/// frozen, non-trainable state (the FFNG encoding matrix).
struct Particle {
  Eigen::VectorXd theta;
  Eigen::MatrixXd encoding;
};

/// Log joint density and its gradient, aligned with Particle::theta.
struct LogJoint {
  double value = 0.0;
  Eigen::VectorXd grad;
};

}  // namespace staci
