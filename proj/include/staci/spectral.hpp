#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "staci/common.hpp"
#include "staci/kernels.hpp"

namespace staci {

/// J frequency rows (omega_s1, omega_s2, omega_t, omega_L...) of width 3 + p.
struct FrequencySet {
  Eigen::MatrixXd omega;

  Eigen::Index count() const { return omega.rows(); }
  Eigen::Index latent_dim() const { return omega.cols() - 3; }
};

/// Cosine amplitudes a and sine amplitudes b, each of length J.
struct AmplitudeSet {
  Eigen::VectorXd a;
  Eigen::VectorXd b;
};

/// Degrees of freedom 2 nu reproduce the Matern characteristic function.
inline constexpr double kDefaultDfMultiplier = 2.0;

/// Per-coordinate frequency scale (1/rho_s, 1/rho_s, 1/rho_t, 1/rho_l, ...).
Eigen::VectorXd frequency_scale(const CovarianceParams& params, Eigen::Index latent_dim);

/// Draws J i.i.d. rows from a multivariate t with df = df_multiplier * nu, zero
/// location and diagonal scale frequency_scale(params, p), generated as a scaled
/// Gaussian divided by sqrt(chi2_df / df).
FrequencySet sample_frequencies(Eigen::Index count, const CovarianceParams& params,
                                Eigen::Index latent_dim, std::uint64_t seed,
                                double df_multiplier = kDefaultDfMultiplier);

/// [cos(omega_j . x) ..., sin(omega_j . x) ...] with x = (s1, s2, t, L).
Eigen::VectorXd rff_features(const STPoint& point, const Eigen::VectorXd& latent,
                             const FrequencySet& freqs);

/// sum_j cos_j a_j + sin_j b_j.
double rff_evaluate(const Eigen::VectorXd& features, const AmplitudeSet& amps);

/// Covariance of the random-feature process after integrating out the amplitudes:
/// (sigma2 / J) sum_j cos(omega_j . h).
double marginalized_covariance(const Eigen::VectorXd& lag, const FrequencySet& freqs,
                               double sigma2);

/// Same, with lag h = (s_a - s_b, t_a - t_b, La - Lb).
double marginalized_covariance(const STPoint& a, const STPoint& b, const Eigen::VectorXd& la,
                               const Eigen::VectorXd& lb, const FrequencySet& freqs,
                               double sigma2);

/// Scaled length of a lag vector in the expanded space.
double lag_distance(const Eigen::VectorXd& lag, const CovarianceParams& params);

/// Closed form used for the pointwise variance of the random-feature covariance.
///   Exact:   (sigma^4/J)[1/2 + M(2h)/2 - M(h)^2], i.e. Var cos(omega.h) / J
///   Literal: (sigma^4/J)[1 + M(2h)/2 - M(h)^2], leading term 1; nonzero at h = 0
enum class VarianceForm { Exact, Literal };

double feature_covariance_variance(double m, double m2, double sigma2, Eigen::Index features,
                         VarianceForm form);

struct FeatureCovarianceRow {
  Eigen::VectorXd lag;
  double distance = 0.0;
  double empirical_mean = 0.0;
  double theoretical_mean = 0.0;   // sigma2 M(h)
  double empirical_var = 0.0;
  double theoretical_var = 0.0;    // in the report's VarianceForm
  double exact_var = 0.0;
  double literal_var = 0.0;
  double mean_tolerance = 0.0;     // 3 sqrt(exact_var / reps)
  bool mean_ok = true;
  bool var_ok = true;
};

struct FeatureCovarianceReport {
  Eigen::Index features = 0;
  std::size_t reps = 0;
  double var_rel_tolerance = 0.15;
  VarianceForm variance_form = VarianceForm::Exact;
  std::vector<FeatureCovarianceRow> rows;

  bool mean_ok() const;
  bool var_ok() const;
  /// CSV: lag index, distance, empirical/theoretical mean, empirical/theoretical
  /// variance, tolerance and flags.
  void write_csv(std::ostream& os) const;
};

/// Monte-Carlo check of the random-feature covariance mean and variance over
/// `reps` independent frequency draws. Lags are vectors of width 3 + p.
FeatureCovarianceReport verify_feature_covariance(const std::vector<Eigen::VectorXd>& lags, Eigen::Index features,
                               std::size_t reps, const CovarianceParams& params,
                               std::uint64_t seed, double df_multiplier = kDefaultDfMultiplier,
                               double var_rel_tolerance = 0.15,
                               VarianceForm variance_form = VarianceForm::Exact);

/// Evenly spaced lags along a fixed unit direction, from distance 0 to max_distance.
std::vector<Eigen::VectorXd> lag_grid(std::size_t count, double max_distance,
                                      const CovarianceParams& params, Eigen::Index latent_dim);

}  // namespace staci
