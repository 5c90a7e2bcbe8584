#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "staci/particle.hpp"

namespace staci {

struct Bandwidth {
  enum class Kind { Median, Fixed };
  Kind kind = Kind::Median;
  double fixed_h2 = 1.0;  // used when kind == Fixed

  static Bandwidth median() { return {}; }
  static Bandwidth fixed(double h2) { return {Kind::Fixed, h2}; }
};

/// RBF kernel kappa(x, x') = exp(-|x - x'|^2 / (2 h^2)) over the rows of an
/// M x dim particle matrix.
struct KernelEval {
  Eigen::MatrixXd k;          // M x M, symmetric, unit diagonal
  double h2 = 1.0;
  Eigen::MatrixXd repulsion;  // row i = sum_j grad_{x_j} kappa(x_j, x_i)
};

/// Median heuristic: h^2 = median(pairwise squared distances) / (2 log(M + 1)),
/// floored at 1e-12.
KernelEval rbf_kernel(const Eigen::MatrixXd& particles, const Bandwidth& bandwidth);

/// phi(x_i) = (1/M) sum_j [kappa(x_j, x_i) score_j + grad_{x_j} kappa(x_j, x_i)].
Eigen::MatrixXd svgd_direction(const Eigen::MatrixXd& particles, const Eigen::MatrixXd& scores,
                               const Bandwidth& bandwidth);

enum class OptimizerKind { Adam, Plain };

struct SVGDConfig {
  std::size_t particles = 5;   // M
  double step_size = 1e-3;     // learning rate
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  Bandwidth bandwidth;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  /// Multiplier on step_size as a function of the (1-based) step; empty = constant.
  std::function<double(std::size_t)> schedule;

  void validate() const;
};

struct Ensemble {
  std::vector<Particle> particles;
  Eigen::MatrixXd first_moment;   // M x dim
  Eigen::MatrixXd second_moment;  // M x dim
  std::size_t step = 0;

  explicit Ensemble(std::vector<Particle> ps = {});
  std::size_t size() const { return particles.size(); }
  Eigen::Index dim() const;
  /// M x dim matrix of particle coordinates.
  Eigen::MatrixXd thetas() const;
};

/// Unnormalized log posterior evaluated on a minibatch of data indices.
class SvgdTarget {
 public:
  virtual ~SvgdTarget() = default;
  virtual std::size_t data_size() const = 0;
  virtual LogJoint log_joint_grad(const Particle& particle,
                                  std::span<const std::size_t> batch) const = 0;
  /// Coordinates SVGD may move (1) or must leave alone (0).
  virtual Eigen::VectorXd trainable_mask(Eigen::Index dim) const;
  virtual std::vector<std::string> summary_names() const { return {}; }
  virtual std::vector<double> summarize(const Particle&) const { return {}; }
};

/// Multivariate Gaussian target, ignores the batch. Useful for checking the sampler.
class GaussianTarget final : public SvgdTarget {
 public:
  GaussianTarget(Eigen::VectorXd mean, Eigen::MatrixXd cov);
  std::size_t data_size() const override { return 1; }
  LogJoint log_joint_grad(const Particle& particle,
                          std::span<const std::size_t> batch) const override;

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd precision_;
  double log_norm_ = 0.0;
};

struct Direction {
  Eigen::MatrixXd phi;          // M x dim
  Eigen::VectorXd log_joint;    // per particle
};

/// Evaluates every particle's log joint gradient (concurrently) and combines them.
Direction svgd_direction(const SvgdTarget& target, const Ensemble& ensemble,
                         std::span<const std::size_t> batch, const Bandwidth& bandwidth);

/// Moves every particle along phi: theta + lr phi for OptimizerKind::Plain, or the
/// adaptive-moment update treating -phi as the gradient (no weight decay).
void apply_update(Ensemble& ensemble, const Eigen::MatrixXd& phi, const SVGDConfig& config);

/// One full SVGD iteration; returns the mean log joint across particles.
double svgd_step(Ensemble& ensemble, const SvgdTarget& target,
                 std::span<const std::size_t> batch, const SVGDConfig& config);

struct TraceRow {
  std::size_t epoch = 0;
  double mean_log_joint = 0.0;       // average over the epoch's steps and particles
  std::vector<double> summaries;     // ensemble mean of each target summary
};

struct TrainResult {
  Ensemble ensemble;
  std::vector<TraceRow> trace;
  std::vector<std::string> summary_names;
};

/// epochs x ceil(n / batch_size) SVGD steps over shuffled minibatches.
TrainResult train(const SvgdTarget& target, Ensemble init, const SVGDConfig& config);

void write_trace_csv(std::ostream& os, const TrainResult& result);

}  // namespace staci
