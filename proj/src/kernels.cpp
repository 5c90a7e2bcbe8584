#include "staci/kernels.hpp"

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <tuple>

#include "staci/rng.hpp"

namespace staci {

namespace {

void require_positive(double v, const char* name) {
  if (!std::isfinite(v) || v <= 0.0)
    throw ParameterError(std::string(name) + " must be finite and > 0");
}

void require_nonnegative(double v, const char* name) {
  if (!std::isfinite(v) || v < 0.0)
    throw ParameterError(std::string(name) + " must be finite and >= 0");
}

double squared_st_distance(const STPoint& a, const STPoint& b, const CovarianceParams& params) {
  const double ds1 = a.s1 - b.s1;
  const double ds2 = a.s2 - b.s2;
  const double dt = a.t - b.t;
  return (ds1 * ds1 + ds2 * ds2) / (params.rho_s * params.rho_s) +
         dt * dt / (params.rho_t * params.rho_t);
}

std::vector<Eigen::VectorXd> evaluate_latent(std::span<const STPoint> points,
                                             const LatentFn& latent_fn) {
  std::vector<Eigen::VectorXd> out;
  if (!latent_fn) return out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(latent_fn(p));
  for (const auto& l : out)
    if (l.size() != out.front().size())
      throw ShapeError("latent function returned vectors of different lengths");
  return out;
}

double pair_distance(const STPoint& a, const STPoint& b, const Eigen::VectorXd* la,
                     const Eigen::VectorXd* lb, const CovarianceParams& params) {
  double d2 = squared_st_distance(a, b, params);
  if (la != nullptr) d2 += (*la - *lb).squaredNorm() / (params.rho_l * params.rho_l);
  return std::sqrt(d2);
}

}  // namespace

void CovarianceParams::validate() const {
  require_nonnegative(sigma2, "sigma2");
  require_nonnegative(tau2, "tau2");
  require_positive(nu, "nu");
  require_positive(rho_s, "rho_s");
  require_positive(rho_t, "rho_t");
  require_positive(rho_l, "rho_l");
}

double matern_correlation(double d, double nu) {
  require_positive(nu, "nu");
  if (!std::isfinite(d) || d < 0.0) throw ParameterError("distance must be finite and >= 0");
  // The Bessel form is 0 * inf at the origin.
  if (d == 0.0) return 1.0;

  if (nu == 0.5) return std::exp(-d);
  if (nu == 1.5) {
    const double x = std::sqrt(3.0) * d;
    return (1.0 + x) * std::exp(-x);
  }
  if (nu == 2.5) {
    const double x = std::sqrt(5.0) * d;
    return (1.0 + x + x * x / 3.0) * std::exp(-x);
  }

  const double x = std::sqrt(2.0 * nu) * d;
  if (x > 700.0) return 0.0;
  const double k = std::cyl_bessel_k(nu, x);
  if (!std::isfinite(k)) return 1.0;
  if (k <= 0.0) return 0.0;
  const double log_value =
      (1.0 - nu) * std::log(2.0) - std::lgamma(nu) + nu * std::log(x) + std::log(k);
  return std::clamp(std::exp(log_value), 0.0, 1.0);
}

double st_distance(const STPoint& a, const STPoint& b, const CovarianceParams& params) {
  params.validate();
  return std::sqrt(squared_st_distance(a, b, params));
}

double expanded_distance(const STPoint& a, const STPoint& b, std::span<const double> la,
                         std::span<const double> lb, const CovarianceParams& params) {
  params.validate();
  if (la.size() != lb.size())
    throw ShapeError("latent vectors have lengths " + std::to_string(la.size()) + " and " +
                     std::to_string(lb.size()));
  double latent = 0.0;
  for (std::size_t j = 0; j < la.size(); ++j) {
    const double diff = la[j] - lb[j];
    latent += diff * diff;
  }
  return std::sqrt(squared_st_distance(a, b, params) + latent / (params.rho_l * params.rho_l));
}

double expanded_distance(const STPoint& a, const STPoint& b, const Eigen::VectorXd& la,
                         const Eigen::VectorXd& lb, const CovarianceParams& params) {
  return expanded_distance(a, b, std::span<const double>(la.data(), la.size()),
                           std::span<const double>(lb.data(), lb.size()), params);
}

Eigen::MatrixXd signal_covariance(std::span<const STPoint> points, const CovarianceParams& params,
                                  const LatentFn& latent_fn) {
  params.validate();
  const auto latent = evaluate_latent(points, latent_fn);
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    c(i, i) = params.sigma2;
    for (Eigen::Index j = 0; j < i; ++j) {
      const Eigen::VectorXd* li = latent.empty() ? nullptr : &latent[i];
      const Eigen::VectorXd* lj = latent.empty() ? nullptr : &latent[j];
      const double d = pair_distance(points[i], points[j], li, lj, params);
      c(i, j) = c(j, i) = params.sigma2 * matern_correlation(d, params.nu);
    }
  }
  return c;
}

Eigen::MatrixXd cross_covariance(std::span<const STPoint> a, std::span<const STPoint> b,
                                 const CovarianceParams& params, const LatentFn& latent_fn) {
  params.validate();
  const auto la = evaluate_latent(a, latent_fn);
  const auto lb = evaluate_latent(b, latent_fn);
  Eigen::MatrixXd c(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      const Eigen::VectorXd* li = la.empty() ? nullptr : &la[i];
      const Eigen::VectorXd* lj = lb.empty() ? nullptr : &lb[j];
      const double d = pair_distance(a[i], b[j], li, lj, params);
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          params.sigma2 * matern_correlation(d, params.nu);
    }
  }
  return c;
}

Eigen::MatrixXd jittered_cholesky(const Eigen::MatrixXd& a, double scale) {
  const Eigen::Index n = a.rows();
  if (scale <= 0.0) {
    if (a.isZero(0.0)) return Eigen::MatrixXd::Zero(n, n);
    scale = a.diagonal().cwiseAbs().maxCoeff();
  }
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  for (double jitter = 1e-10 * scale; jitter <= 1e-4 * scale * (1.0 + 1e-12); jitter *= 10.0) {
    Eigen::MatrixXd b = a;
    b.diagonal().array() += jitter;
    llt.compute(b);
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  throw NumericalError("covariance matrix is not positive definite after jitter escalation to " +
                       std::to_string(1e-4 * scale));
}

Eigen::VectorXd exact_gp_simulate(std::span<const STPoint> points, const CovarianceParams& params,
                                  const LatentFn& latent_fn, std::uint64_t seed, std::size_t cap) {
  params.validate();
  if (points.size() > cap)
    throw SizeError("exact GP oracle limited to " + std::to_string(cap) + " points, got " +
                    std::to_string(points.size()));

  // The latent field is a function of (s, t), so identical coordinates map to one
  // signal location; only the nugget differs between them.
  std::map<std::tuple<double, double, double>, Eigen::Index> unique_index;
  std::vector<STPoint> unique_points;
  std::vector<Eigen::Index> site(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto key = std::make_tuple(points[i].s1, points[i].s2, points[i].t);
    auto [it, inserted] = unique_index.emplace(key, static_cast<Eigen::Index>(unique_points.size()));
    if (inserted) unique_points.push_back(points[i]);
    site[i] = it->second;
  }

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto m = static_cast<Eigen::Index>(unique_points.size());
  Eigen::VectorXd z(m);
  for (Eigen::Index i = 0; i < m; ++i) z(i) = normal(rng);

  Eigen::VectorXd signal = Eigen::VectorXd::Zero(m);
  if (params.sigma2 > 0.0) {
    const Eigen::MatrixXd cov = signal_covariance(unique_points, params, latent_fn);
    signal = jittered_cholesky(cov, params.sigma2) * z;
  }

  const double tau = std::sqrt(params.tau2);
  Eigen::VectorXd y(static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double noise = normal(rng);
    y(static_cast<Eigen::Index>(i)) = signal(site[i]) + tau * noise;
  }
  return y;
}

KrigingResult exact_gp_predict(std::span<const STPoint> train, std::span<const STPoint> test,
                               const CovarianceParams& params, const LatentFn& latent_fn,
                               std::size_t cap) {
  params.validate();
  if (train.size() > cap)
    throw SizeError("exact GP oracle limited to " + std::to_string(cap) + " training points");
  const Eigen::VectorXd y = response_vector(train);

  Eigen::MatrixXd k = signal_covariance(train, params, latent_fn);
  k.diagonal().array() += params.tau2;
  const double scale = params.sigma2 + params.tau2;
  const Eigen::MatrixXd chol = jittered_cholesky(k, scale);
  const auto lower = chol.triangularView<Eigen::Lower>();

  const Eigen::MatrixXd kx = cross_covariance(train, test, params, latent_fn);  // n x m
  const Eigen::MatrixXd v = lower.solve(kx);
  const Eigen::VectorXd w = lower.solve(y);

  KrigingResult out;
  out.mean = v.transpose() * w;
  out.variance = (scale - v.colwise().squaredNorm().array()).max(0.0).matrix().transpose();
  return out;
}

}  // namespace staci
