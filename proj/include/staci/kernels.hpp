#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include <Eigen/Dense>

#include "staci/common.hpp"

namespace staci {

/// Parameters of the (possibly dimension-expanded) Matern covariance.
///
/// nu and the three ranges must be strictly positive. The variances sigma2 and
/// tau2 are positive for every model fit; the exact-GP oracle additionally accepts
/// zero so degenerate covariances can be simulated.
struct CovarianceParams {
  double sigma2 = 1.0;
  double tau2 = 0.1;
  double nu = 1.5;
  double rho_s = 0.2;
  double rho_t = 0.5;
  double rho_l = 1.0;  // shared by every latent dimension

  /// Throws ParameterError unless nu and ranges are finite and > 0 and the
  /// variances are finite and >= 0.
  void validate() const;
};

/// Maps a coordinate to its latent vector L(s, t).
using LatentFn = std::function<Eigen::VectorXd(const STPoint&)>;

inline constexpr std::size_t kDefaultOracleCap = 5000;

/// Matern correlation (2^{1-nu}/Gamma(nu)) (sqrt(2 nu) d)^nu K_nu(sqrt(2 nu) d).
/// Closed forms for nu in {0.5, 1.5, 2.5}; other nu use std::cyl_bessel_k.
double matern_correlation(double d, double nu);

/// Scaled space-time distance sqrt(|s-s'|^2/rho_s^2 + (t-t')^2/rho_t^2).
double st_distance(const STPoint& a, const STPoint& b, const CovarianceParams& params);

/// Distance in the expanded space [s, t, L]: adds sum_j (La_j - Lb_j)^2 / rho_l^2.
double expanded_distance(const STPoint& a, const STPoint& b,
                         std::span<const double> la, std::span<const double> lb,
                         const CovarianceParams& params);

double expanded_distance(const STPoint& a, const STPoint& b, const Eigen::VectorXd& la,
                         const Eigen::VectorXd& lb, const CovarianceParams& params);

/// sigma2 * M(d) over all pairs (no nugget). latent_fn may be empty.
Eigen::MatrixXd signal_covariance(std::span<const STPoint> points, const CovarianceParams& params,
                                  const LatentFn& latent_fn = {});

/// Cross covariance sigma2 * M(d(a_i, b_j)).
Eigen::MatrixXd cross_covariance(std::span<const STPoint> a, std::span<const STPoint> b,
                                 const CovarianceParams& params, const LatentFn& latent_fn = {});

/// Cholesky of a symmetric PSD matrix with diagonal jitter escalation: starts at
/// 1e-10 * scale and multiplies by 10 up to 1e-4 * scale. A zero matrix with a
/// zero scale factors trivially. Throws NumericalError when every level fails.
Eigen::MatrixXd jittered_cholesky(const Eigen::MatrixXd& a, double scale);

/// One draw of y ~ N(0, sigma2 M + tau2 I) at the given points.
/// Coincident coordinates share the same latent signal value exactly.
Eigen::VectorXd exact_gp_simulate(std::span<const STPoint> points, const CovarianceParams& params,
                                  const LatentFn& latent_fn, std::uint64_t seed,
                                  std::size_t cap = kDefaultOracleCap);

struct KrigingResult {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;  // predictive, includes tau2
};

/// Conditional-Gaussian (simple kriging) mean and predictive variance.
KrigingResult exact_gp_predict(std::span<const STPoint> train, std::span<const STPoint> test,
                               const CovarianceParams& params, const LatentFn& latent_fn = {},
                               std::size_t cap = kDefaultOracleCap);

}  // namespace staci
