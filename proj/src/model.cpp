#include "staci/model.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/special_functions/digamma.hpp>

#include "staci/rng.hpp"

namespace staci {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Per-coordinate range group of a frequency column: 0 = space, 1 = time, 2 = latent.
int range_group(Eigen::Index col) { return col < 2 ? 0 : (col == 2 ? 1 : 2); }

double inv_gamma_log_scale_score(double x, double shape, double scale) {
  // d/d(log x) of [log IG(x) + log x]
  return -shape + scale / x;
}

}  // namespace

double HyperValues::get(Hyper h) const {
  switch (h) {
    case kLogAlpha: return alpha;
    case kLogNu: return nu;
    case kLogRhoS: return rho_s;
    case kLogRhoT: return rho_t;
    case kLogRhoL: return rho_l;
    case kLogSigma2: return sigma2;
    case kLogTau2: return tau2;
    default: break;
  }
  throw ParameterError("unknown hyperparameter index");
}

void HyperValues::set(Hyper h, double v) {
  switch (h) {
    case kLogAlpha: alpha = v; return;
    case kLogNu: nu = v; return;
    case kLogRhoS: rho_s = v; return;
    case kLogRhoT: rho_t = v; return;
    case kLogRhoL: rho_l = v; return;
    case kLogSigma2: sigma2 = v; return;
    case kLogTau2: tau2 = v; return;
    default: break;
  }
  throw ParameterError("unknown hyperparameter index");
}

CovarianceParams HyperValues::covariance() const {
  return CovarianceParams{sigma2, tau2, nu, rho_s, rho_t, rho_l};
}

void ModelConfig::validate() const {
  if (num_features < 1) throw ParameterError("number of random features J must be >= 1");
  if (inr.latent_dim < 0) throw ParameterError("latent dimension must be >= 0");
  if (inr.latent_dim > 0) inr.validate();
  if (!std::isfinite(df_multiplier) || df_multiplier <= 0.0)
    throw ParameterError("degrees-of-freedom multiplier must be > 0");
  for (int h = 0; h < kHyperCount; ++h) {
    const double v = init.get(static_cast<Hyper>(h));
    if (!std::isfinite(v) || v <= 0.0)
      throw ParameterError(std::string("initial ") + kHyperNames[h] + " must be > 0");
  }
}

double normal_logpdf(double x, double mean, double var) {
  const double z = x - mean;
  return -0.5 * (kLog2Pi + std::log(var)) - z * z / (2.0 * var);
}

double inv_gamma_logpdf(double x, double shape, double scale) {
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

double mvt_logpdf(const Eigen::VectorXd& x, double df, const Eigen::VectorXd& scale) {
  const double d = static_cast<double>(x.size());
  const double q = x.cwiseQuotient(scale).squaredNorm();
  return std::lgamma(0.5 * (df + d)) - std::lgamma(0.5 * df) -
         0.5 * d * std::log(df * std::numbers::pi) - scale.array().log().sum() -
         0.5 * (df + d) * std::log1p(q / df);
}

StaciModel::StaciModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const Eigen::Index p = config_.latent_dim();
  if (p > 0) inr_.emplace(config_.inr);
  layout_.features = config_.num_features;
  layout_.input_dim = 3 + p;
  Eigen::Index offset = 0;
  auto take = [&](Eigen::Index n) {
    Segment s{offset, n};
    offset += n;
    return s;
  };
  layout_.inr = take(inr_ ? inr_->parameter_count() : 0);
  layout_.freq = take(layout_.features * layout_.input_dim);
  layout_.amp_a = take(layout_.features);
  layout_.amp_b = take(layout_.features);
  layout_.hyper = take(kHyperCount);
  layout_.total = offset;
}

void StaciModel::check(const Particle& p) const {
  if (p.theta.size() != layout_.total)
    throw ShapeError("particle has " + std::to_string(p.theta.size()) + " coordinates, model expects " +
                     std::to_string(layout_.total));
}

Particle StaciModel::assemble(const INRWeights& inr, const FrequencySet& freqs,
                              const AmplitudeSet& amps, const HyperValues& hypers) const {
  if (inr.params.size() != layout_.inr.size) throw ShapeError("INR weights do not match layout");
  if (freqs.omega.rows() != layout_.features || freqs.omega.cols() != layout_.input_dim)
    throw ShapeError("frequency matrix does not match layout");
  if (amps.a.size() != layout_.features || amps.b.size() != layout_.features)
    throw ShapeError("amplitudes do not match layout");
  Particle p;
  p.theta.resize(layout_.total);
  p.theta.segment(layout_.inr.offset, layout_.inr.size) = inr.params;
  p.theta.segment(layout_.freq.offset, layout_.freq.size) =
      Eigen::Map<const Eigen::VectorXd>(freqs.omega.data(), freqs.omega.size());
  p.theta.segment(layout_.amp_a.offset, layout_.features) = amps.a;
  p.theta.segment(layout_.amp_b.offset, layout_.features) = amps.b;
  for (int h = 0; h < kHyperCount; ++h)
    p.theta(layout_.hyper.offset + h) = std::log(hypers.get(static_cast<Hyper>(h)));
  p.encoding = inr.encoding;
  return p;
}

Particle StaciModel::init_particle(std::uint64_t seed) const {
  const HyperValues& h = config_.init;
  INRWeights inr;
  if (inr_) inr = inr_->init(h.alpha, derive_seed(seed, 0));
  const FrequencySet freqs = sample_frequencies(layout_.features, h.covariance(), latent_dim(),
                                                derive_seed(seed, 1), config_.df_multiplier);
  Rng rng(derive_seed(seed, 2));
  std::normal_distribution<double> normal(0.0, std::sqrt(h.sigma2 / layout_.features));
  AmplitudeSet amps{Eigen::VectorXd(layout_.features), Eigen::VectorXd(layout_.features)};
  for (Eigen::Index j = 0; j < layout_.features; ++j) amps.a(j) = normal(rng);
  for (Eigen::Index j = 0; j < layout_.features; ++j) amps.b(j) = normal(rng);
  return assemble(inr, freqs, amps, h);
}

HyperValues StaciModel::hypers(const Particle& p) const {
  check(p);
  HyperValues out;
  for (int h = 0; h < kHyperCount; ++h)
    out.set(static_cast<Hyper>(h), std::exp(p.theta(layout_.hyper.offset + h)));
  return out;
}

FrequencySet StaciModel::frequencies(const Particle& p) const {
  check(p);
  return FrequencySet{Eigen::Map<const Eigen::MatrixXd>(p.theta.data() + layout_.freq.offset,
                                                       layout_.features, layout_.input_dim)};
}

AmplitudeSet StaciModel::amplitudes(const Particle& p) const {
  check(p);
  return AmplitudeSet{p.theta.segment(layout_.amp_a.offset, layout_.features),
                      p.theta.segment(layout_.amp_b.offset, layout_.features)};
}

INRWeights StaciModel::inr_weights(const Particle& p) const {
  check(p);
  return INRWeights{p.theta.segment(layout_.inr.offset, layout_.inr.size), p.encoding};
}

Eigen::MatrixXd StaciModel::latent(const Particle& p, const Eigen::MatrixXd& coords) const {
  check(p);
  if (!inr_) return Eigen::MatrixXd(coords.rows(), 0);
  return inr_->forward(p.theta.segment(layout_.inr.offset, layout_.inr.size), p.encoding, coords);
}

Eigen::VectorXd StaciModel::forward(const Particle& p, const Eigen::MatrixXd& coords) const {
  const Eigen::Index n = coords.rows();
  Eigen::MatrixXd x(n, layout_.input_dim);
  x.leftCols(3) = coords;
  if (inr_) x.rightCols(latent_dim()) = latent(p, coords);
  const Eigen::Map<const Eigen::MatrixXd> omega(p.theta.data() + layout_.freq.offset,
                                                layout_.features, layout_.input_dim);
  const Eigen::MatrixXd angle = x * omega.transpose();
  const auto a = p.theta.segment(layout_.amp_a.offset, layout_.features);
  const auto b = p.theta.segment(layout_.amp_b.offset, layout_.features);
  Eigen::VectorXd z = angle.array().cos().matrix() * a + angle.array().sin().matrix() * b;
  if (!z.allFinite()) throw NumericalError("non-finite model output");
  return z;
}

Eigen::VectorXd StaciModel::forward(const Particle& p, std::span<const STPoint> batch) const {
  return forward(p, coordinate_matrix(batch));
}

LogJoint StaciModel::log_prior_grad(const Particle& p) const {
  check(p);
  const HyperPriors& pr = config_.priors;
  const HyperValues h = hypers(p);
  const Eigen::Index hyper = layout_.hyper.offset;
  LogJoint out;
  out.grad = Eigen::VectorXd::Zero(layout_.total);
  double lp = 0.0;

  // INR weights ~ N(0, alpha).
  if (layout_.inr.size > 0) {
    const auto w = p.theta.segment(layout_.inr.offset, layout_.inr.size);
    const double n_w = static_cast<double>(layout_.inr.size);
    const double ss = w.squaredNorm();
    lp += -0.5 * n_w * (kLog2Pi + std::log(h.alpha)) - ss / (2.0 * h.alpha);
    out.grad.segment(layout_.inr.offset, layout_.inr.size) = -w / h.alpha;
    out.grad(hyper + kLogAlpha) += -0.5 * n_w + ss / (2.0 * h.alpha);
  }

  // Frequency rows ~ MVT(df = m nu, scale 1/rho).
  {
    const double df = config_.df_multiplier * h.nu;
    const Eigen::Index d = layout_.input_dim;
    const double dd = static_cast<double>(d);
    Eigen::VectorXd rho(d);
    rho << h.rho_s, h.rho_s, h.rho_t, Eigen::VectorXd::Constant(d - 3, h.rho_l);
    const Eigen::ArrayXd rho2 = rho.array().square();
    const Eigen::Map<const Eigen::MatrixXd> omega(p.theta.data() + layout_.freq.offset,
                                                  layout_.features, d);
    Eigen::Map<Eigen::MatrixXd> g_omega(out.grad.data() + layout_.freq.offset, layout_.features, d);
    const double log_norm = std::lgamma(0.5 * (df + dd)) - std::lgamma(0.5 * df) -
                            0.5 * dd * std::log(df * std::numbers::pi) +
                            rho.array().log().sum();
    const double dnorm_ddf = 0.5 * boost::math::digamma(0.5 * (df + dd)) -
                             0.5 * boost::math::digamma(0.5 * df) - dd / (2.0 * df);
    double g_nu = 0.0;
    std::array<double, 3> g_rho{0.0, 0.0, 0.0};
    for (Eigen::Index j = 0; j < layout_.features; ++j) {
      const Eigen::ArrayXd w2r2 = omega.row(j).transpose().array().square() * rho2;
      const double q = w2r2.sum();
      lp += log_norm - 0.5 * (df + dd) * std::log1p(q / df);
      const double coef = (df + dd) / (df + q);
      g_omega.row(j) = (-coef * omega.row(j).transpose().array() * rho2).matrix().transpose();
      for (Eigen::Index k = 0; k < d; ++k) g_rho[range_group(k)] += 1.0 - coef * w2r2(k);
      const double dlog_ddf =
          dnorm_ddf - 0.5 * std::log1p(q / df) + 0.5 * (df + dd) * q / (df * (df + q));
      g_nu += df * dlog_ddf;  // d df / d log nu = df
    }
    out.grad(hyper + kLogNu) += g_nu;
    out.grad(hyper + kLogRhoS) += g_rho[0];
    out.grad(hyper + kLogRhoT) += g_rho[1];
    out.grad(hyper + kLogRhoL) += g_rho[2];
  }

  // Amplitudes ~ N(0, sigma2 / J).
  {
    const double jf = static_cast<double>(layout_.features);
    const double var = h.sigma2 / jf;
    const auto a = p.theta.segment(layout_.amp_a.offset, layout_.features);
    const auto b = p.theta.segment(layout_.amp_b.offset, layout_.features);
    const double ss = a.squaredNorm() + b.squaredNorm();
    lp += -jf * (kLog2Pi + std::log(var)) - ss / (2.0 * var);
    out.grad.segment(layout_.amp_a.offset, layout_.features) = -a / var;
    out.grad.segment(layout_.amp_b.offset, layout_.features) = -b / var;
    out.grad(hyper + kLogSigma2) += -jf + ss / (2.0 * var);
  }

  // Hyperpriors, with log-Jacobians for the inverse-gamma terms.
  const auto log_h = [&](Hyper k) { return p.theta(hyper + k); };
  lp += inv_gamma_logpdf(h.alpha, pr.alpha_shape, pr.alpha_scale) + log_h(kLogAlpha);
  out.grad(hyper + kLogAlpha) += inv_gamma_log_scale_score(h.alpha, pr.alpha_shape, pr.alpha_scale);
  lp += inv_gamma_logpdf(h.sigma2, pr.sigma2_shape, pr.sigma2_scale) + log_h(kLogSigma2);
  out.grad(hyper + kLogSigma2) +=
      inv_gamma_log_scale_score(h.sigma2, pr.sigma2_shape, pr.sigma2_scale);
  lp += inv_gamma_logpdf(h.tau2, pr.tau2_shape, pr.tau2_scale) + log_h(kLogTau2);
  out.grad(hyper + kLogTau2) += inv_gamma_log_scale_score(h.tau2, pr.tau2_shape, pr.tau2_scale);

  const auto add_log_normal = [&](Hyper k, double mean, double var) {
    lp += normal_logpdf(log_h(k), mean, var);
    out.grad(hyper + k) += -(log_h(k) - mean) / var;
  };
  add_log_normal(kLogNu, pr.log_nu_mean, pr.log_nu_var);
  add_log_normal(kLogRhoS, pr.log_rho_s_mean, pr.log_rho_s_var);
  add_log_normal(kLogRhoT, pr.log_rho_t_mean, pr.log_rho_t_var);
  add_log_normal(kLogRhoL, pr.log_rho_l_mean, pr.log_rho_l_var);

  out.value = lp;
  return out;
}

double StaciModel::log_prior(const Particle& p) const { return log_prior_grad(p).value; }

double StaciModel::log_likelihood(const Particle& p, std::span<const STPoint> batch,
                                  std::size_t total_n) const {
  if (batch.empty()) throw ParameterError("log likelihood needs a nonempty batch");
  const Eigen::VectorXd y = response_vector(batch);
  const Eigen::VectorXd z = forward(p, batch);
  const double tau2 = hypers(p).tau2;
  const double scale = static_cast<double>(total_n) / static_cast<double>(batch.size());
  const double ss = (y - z).squaredNorm();
  return scale * (-0.5 * static_cast<double>(batch.size()) * (kLog2Pi + std::log(tau2)) -
                  ss / (2.0 * tau2));
}

LogJoint StaciModel::log_joint_grad(const Particle& p, std::span<const STPoint> batch,
                                    std::size_t total_n) const {
  if (batch.empty()) throw ParameterError("log joint needs a nonempty batch");
  LogJoint out = log_prior_grad(p);

  const Eigen::MatrixXd coords = coordinate_matrix(batch);
  const Eigen::VectorXd y = response_vector(batch);
  const Eigen::Index n = coords.rows();
  const Eigen::Index d = layout_.input_dim;
  const Eigen::Index jn = layout_.features;

  Inr::Tape tape;
  Eigen::MatrixXd x(n, d);
  x.leftCols(3) = coords;
  const auto inr_params = p.theta.segment(layout_.inr.offset, layout_.inr.size);
  if (inr_) x.rightCols(latent_dim()) = inr_->forward(inr_params, p.encoding, coords, &tape);

  const Eigen::Map<const Eigen::MatrixXd> omega(p.theta.data() + layout_.freq.offset, jn, d);
  const Eigen::MatrixXd angle = x * omega.transpose();
  const Eigen::MatrixXd c = angle.array().cos();
  const Eigen::MatrixXd s = angle.array().sin();
  const auto a = p.theta.segment(layout_.amp_a.offset, jn);
  const auto b = p.theta.segment(layout_.amp_b.offset, jn);
  const Eigen::VectorXd z = c * a + s * b;
  if (!z.allFinite()) throw NumericalError("non-finite model output");

  const double tau2 = std::exp(p.theta(layout_.hyper.offset + kLogTau2));
  const double scale = static_cast<double>(total_n) / static_cast<double>(n);
  const Eigen::VectorXd r = y - z;
  const double ss = r.squaredNorm();
  out.value += scale * (-0.5 * static_cast<double>(n) * (kLog2Pi + std::log(tau2)) -
                        ss / (2.0 * tau2));
  out.grad(layout_.hyper.offset + kLogTau2) +=
      scale * (-0.5 * static_cast<double>(n) + ss / (2.0 * tau2));

  // dLL/dZ_i
  const Eigen::VectorXd w = (scale / tau2) * r;
  out.grad.segment(layout_.amp_a.offset, jn) += c.transpose() * w;
  out.grad.segment(layout_.amp_b.offset, jn) += s.transpose() * w;

  // dLL/dangle_ij = w_i (-a_j sin + b_j cos)
  const Eigen::MatrixXd g_angle =
      ((c * b.asDiagonal() - s * a.asDiagonal()).array().colwise() * w.array()).matrix();
  Eigen::Map<Eigen::MatrixXd>(out.grad.data() + layout_.freq.offset, jn, d) +=
      g_angle.transpose() * x;
  if (inr_) {
    const Eigen::MatrixXd upstream = g_angle * omega.rightCols(latent_dim());
    out.grad.segment(layout_.inr.offset, layout_.inr.size) +=
        inr_->backward(inr_params, p.encoding, tape, upstream);
  }
  if (!std::isfinite(out.value) || !out.grad.allFinite())
    throw NumericalError("non-finite log joint or gradient");
  return out;
}

Eigen::VectorXd StaciModel::trainable_mask() const {
  Eigen::VectorXd mask = Eigen::VectorXd::Ones(layout_.total);
  if (!config_.train_frequencies) mask.segment(layout_.freq.offset, layout_.freq.size).setZero();
  if (!config_.train_hypers) mask.segment(layout_.hyper.offset, layout_.hyper.size).setZero();
  return mask;
}

}  // namespace staci
