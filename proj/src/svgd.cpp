#include "staci/svgd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>

#include "staci/common.hpp"
#include "staci/parallel.hpp"
#include "staci/rng.hpp"

namespace staci {

namespace {

constexpr double kMinBandwidth = 1e-12;

double median_of(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace

KernelEval rbf_kernel(const Eigen::MatrixXd& particles, const Bandwidth& bandwidth) {
  const Eigen::Index m = particles.rows();
  if (m < 1) throw ParameterError("kernel needs at least one particle");

  Eigen::MatrixXd d2(m, m);
  const Eigen::VectorXd norms = particles.rowwise().squaredNorm();
  for (Eigen::Index i = 0; i < m; ++i) {
    d2(i, i) = 0.0;
    for (Eigen::Index j = 0; j < i; ++j)
      d2(i, j) = d2(j, i) = (particles.row(i) - particles.row(j)).squaredNorm();
  }

  KernelEval out;
  if (bandwidth.kind == Bandwidth::Kind::Fixed) {
    if (!(bandwidth.fixed_h2 > 0.0)) throw ParameterError("fixed bandwidth must be > 0");
    out.h2 = bandwidth.fixed_h2;
  } else if (m == 1) {
    out.h2 = 1.0;
  } else {
    std::vector<double> pairs;
    pairs.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < i; ++j) pairs.push_back(d2(i, j));
    out.h2 = median_of(std::move(pairs)) / (2.0 * std::log(static_cast<double>(m) + 1.0));
  }
  out.h2 = std::max(out.h2, kMinBandwidth);

  out.k = (-d2.array() / (2.0 * out.h2)).exp().matrix();
  out.k.diagonal().setOnes();
  // grad_{x_j} kappa(x_j, x_i) = kappa_ij (x_i - x_j) / h^2
  out.repulsion = (out.k.rowwise().sum().asDiagonal() * particles - out.k * particles) / out.h2;
  return out;
}

Eigen::MatrixXd svgd_direction(const Eigen::MatrixXd& particles, const Eigen::MatrixXd& scores,
                               const Bandwidth& bandwidth) {
  if (scores.rows() != particles.rows() || scores.cols() != particles.cols())
    throw ShapeError("scores must match the particle matrix shape");
  const KernelEval ke = rbf_kernel(particles, bandwidth);
  return (ke.k * scores + ke.repulsion) / static_cast<double>(particles.rows());
}

void SVGDConfig::validate() const {
  if (particles < 1) throw ParameterError("SVGD needs at least one particle");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ParameterError("step size must be > 0");
  if (batch_size < 1) throw ParameterError("batch size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ParameterError("adaptive-moment betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ParameterError("adaptive-moment epsilon must be > 0");
}

Ensemble::Ensemble(std::vector<Particle> ps) : particles(std::move(ps)) {
  const Eigen::Index d = dim();
  for (const auto& p : particles)
    if (p.theta.size() != d) throw ShapeError("ensemble particles must share one layout");
  first_moment = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(particles.size()), d);
  second_moment = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(particles.size()), d);
}

Eigen::Index Ensemble::dim() const {
  return particles.empty() ? 0 : particles.front().theta.size();
}

Eigen::MatrixXd Ensemble::thetas() const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(particles.size()), dim());
  for (std::size_t i = 0; i < particles.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) = particles[i].theta.transpose();
  return x;
}

Eigen::VectorXd SvgdTarget::trainable_mask(Eigen::Index dim) const {
  return Eigen::VectorXd::Ones(dim);
}

GaussianTarget::GaussianTarget(Eigen::VectorXd mean, Eigen::MatrixXd cov) : mean_(std::move(mean)) {
  if (cov.rows() != mean_.size() || cov.cols() != mean_.size())
    throw ShapeError("covariance must be square and match the mean");
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("target covariance is not positive definite");
  precision_ = llt.solve(Eigen::MatrixXd::Identity(cov.rows(), cov.cols()));
  const Eigen::MatrixXd l = llt.matrixL();
  log_norm_ = -0.5 * static_cast<double>(mean_.size()) * std::log(2.0 * M_PI) -
              l.diagonal().array().log().sum();
}

LogJoint GaussianTarget::log_joint_grad(const Particle& particle,
                                        std::span<const std::size_t>) const {
  const Eigen::VectorXd diff = particle.theta - mean_;
  const Eigen::VectorXd pd = precision_ * diff;
  return LogJoint{log_norm_ - 0.5 * diff.dot(pd), -pd};
}

Direction svgd_direction(const SvgdTarget& target, const Ensemble& ensemble,
                         std::span<const std::size_t> batch, const Bandwidth& bandwidth) {
  const auto m = static_cast<Eigen::Index>(ensemble.size());
  if (m < 1) throw ParameterError("empty ensemble");
  const Eigen::Index d = ensemble.dim();
  Eigen::MatrixXd scores(m, d);
  Direction out;
  out.log_joint.resize(m);
  parallel_for(ensemble.size(), [&](std::size_t i) {
    const LogJoint lj = target.log_joint_grad(ensemble.particles[i], batch);
    if (lj.grad.size() != d) throw ShapeError("target gradient has the wrong length");
    if (!std::isfinite(lj.value) || !lj.grad.allFinite())
      throw NumericalError("non-finite log joint gradient for particle " + std::to_string(i));
    scores.row(static_cast<Eigen::Index>(i)) = lj.grad.transpose();
    out.log_joint(static_cast<Eigen::Index>(i)) = lj.value;
  });
  out.phi = svgd_direction(ensemble.thetas(), scores, bandwidth);
  const Eigen::VectorXd mask = target.trainable_mask(d);
  out.phi = out.phi * mask.asDiagonal();
  return out;
}

void apply_update(Ensemble& ensemble, const Eigen::MatrixXd& phi, const SVGDConfig& config) {
  const auto m = static_cast<Eigen::Index>(ensemble.size());
  if (phi.rows() != m || phi.cols() != ensemble.dim())
    throw ShapeError("perturbation does not match the ensemble");
  ++ensemble.step;
  const double lr =
      config.step_size * (config.schedule ? config.schedule(ensemble.step) : 1.0);
  if (config.optimizer == OptimizerKind::Plain) {
    for (Eigen::Index i = 0; i < m; ++i)
      ensemble.particles[static_cast<std::size_t>(i)].theta += lr * phi.row(i).transpose();
    return;
  }
  // Adam on the "gradient" -phi.
  ensemble.first_moment = config.beta1 * ensemble.first_moment - (1.0 - config.beta1) * phi;
  ensemble.second_moment =
      config.beta2 * ensemble.second_moment + (1.0 - config.beta2) * phi.cwiseAbs2();
  const double t = static_cast<double>(ensemble.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const Eigen::ArrayXXd delta = (ensemble.first_moment.array() / c1) /
                                ((ensemble.second_moment.array() / c2).sqrt() + config.epsilon);
  for (Eigen::Index i = 0; i < m; ++i)
    ensemble.particles[static_cast<std::size_t>(i)].theta -= lr * delta.row(i).matrix().transpose();
}

double svgd_step(Ensemble& ensemble, const SvgdTarget& target,
                 std::span<const std::size_t> batch, const SVGDConfig& config) {
  const Direction dir = svgd_direction(target, ensemble, batch, config.bandwidth);
  apply_update(ensemble, dir.phi, config);
  return dir.log_joint.mean();
}

TrainResult train(const SvgdTarget& target, Ensemble init, const SVGDConfig& config) {
  config.validate();
  const std::size_t n = target.data_size();
  if (n == 0) throw ParameterError("training data is empty");
  if (init.size() < 1) throw ParameterError("empty initial ensemble");

  TrainResult result{std::move(init), {}, target.summary_names()};
  std::vector<std::size_t> order(n);
  const std::uint64_t shuffle_seed = derive_seed(config.seed, SeedStream::Shuffle);
  const std::size_t batch = std::min(config.batch_size, n);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(shuffle_seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      double value = 0.0;
      try {
        value = svgd_step(result.ensemble, target, idx, config);
      } catch (const NumericalError& e) {
        throw NumericalError("SVGD diverged at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(result.ensemble.step) + ": " + e.what());
      }
      if (!std::isfinite(value))
        throw NumericalError("SVGD diverged at epoch " + std::to_string(epoch) +
                             ": non-finite mean log joint");
      sum += value;
      ++steps;
    }

    TraceRow row;
    row.epoch = epoch;
    row.mean_log_joint = sum / static_cast<double>(steps);
    if (!result.summary_names.empty()) {
      row.summaries.assign(result.summary_names.size(), 0.0);
      for (const auto& p : result.ensemble.particles) {
        const auto s = target.summarize(p);
        for (std::size_t k = 0; k < s.size() && k < row.summaries.size(); ++k)
          row.summaries[k] += s[k];
      }
      for (auto& v : row.summaries) v /= static_cast<double>(result.ensemble.size());
    }
    result.trace.push_back(std::move(row));
  }
  return result;
}

void write_trace_csv(std::ostream& os, const TrainResult& result) {
  os << "epoch,mean_log_joint";
  for (const auto& name : result.summary_names) os << ',' << name;
  os << '\n';
  const auto old_precision = os.precision(12);
  for (const auto& row : result.trace) {
    os << row.epoch << ',' << row.mean_log_joint;
    for (double v : row.summaries) os << ',' << v;
    os << '\n';
  }
  os.precision(old_precision);
}

}  // namespace staci
