#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace staci {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid numeric parameter (non-positive range, bad level, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Mismatched vector or matrix dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input above a hard size cap.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, failed factorizations, divergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration file or option.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File read/write and parse failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A space-time coordinate with an optional response.
struct STPoint {
  double s1 = 0.0;
  double s2 = 0.0;
  double t = 0.0;
  std::optional<double> y;
};

using PointSet = std::vector<STPoint>;

/// n x 3 matrix of (s1, s2, t) rows.
inline Eigen::MatrixXd coordinate_matrix(std::span<const STPoint> points) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(points.size()), 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    x(r, 0) = points[i].s1;
    x(r, 1) = points[i].s2;
    x(r, 2) = points[i].t;
  }
  return x;
}

/// Responses of a point set; throws if any is missing.
inline Eigen::VectorXd response_vector(std::span<const STPoint> points) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].y) throw ParameterError("point " + std::to_string(i) + " has no response");
    y(static_cast<Eigen::Index>(i)) = *points[i].y;
  }
  return y;
}

}  // namespace staci
