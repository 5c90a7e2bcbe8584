#include "staci/spectral.hpp"

#include <cmath>
#include <ostream>
#include <random>
#include <string>

#include "staci/parallel.hpp"
#include "staci/rng.hpp"

namespace staci {

Eigen::VectorXd frequency_scale(const CovarianceParams& params, Eigen::Index latent_dim) {
  if (latent_dim < 0) throw ShapeError("negative latent dimension");
  Eigen::VectorXd scale(3 + latent_dim);
  scale(0) = 1.0 / params.rho_s;
  scale(1) = 1.0 / params.rho_s;
  scale(2) = 1.0 / params.rho_t;
  scale.tail(latent_dim).setConstant(1.0 / params.rho_l);
  return scale;
}

FrequencySet sample_frequencies(Eigen::Index count, const CovarianceParams& params,
                                Eigen::Index latent_dim, std::uint64_t seed,
                                double df_multiplier) {
  if (count < 1) throw ParameterError("frequency count must be >= 1");
  params.validate();
  const double df = df_multiplier * params.nu;
  if (!std::isfinite(df) || df <= 0.0)
    throw ParameterError("degrees of freedom must be > 0, got " + std::to_string(df));

  const Eigen::VectorXd scale = frequency_scale(params, latent_dim);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::chi_squared_distribution<double> chi2(df);

  FrequencySet out;
  out.omega.resize(count, scale.size());
  for (Eigen::Index j = 0; j < count; ++j) {
    for (Eigen::Index k = 0; k < scale.size(); ++k) out.omega(j, k) = normal(rng) * scale(k);
    const double mix = std::sqrt(chi2(rng) / df);
    out.omega.row(j) /= mix;
  }
  return out;
}

Eigen::VectorXd rff_features(const STPoint& point, const Eigen::VectorXd& latent,
                             const FrequencySet& freqs) {
  if (latent.size() != freqs.latent_dim())
    throw ShapeError("latent length " + std::to_string(latent.size()) +
                     " does not match frequency latent dimension " +
                     std::to_string(freqs.latent_dim()));
  Eigen::VectorXd x(freqs.omega.cols());
  x << point.s1, point.s2, point.t, latent;
  const Eigen::VectorXd angle = freqs.omega * x;
  const Eigen::Index j = freqs.count();
  Eigen::VectorXd features(2 * j);
  features.head(j) = angle.array().cos();
  features.tail(j) = angle.array().sin();
  return features;
}

double rff_evaluate(const Eigen::VectorXd& features, const AmplitudeSet& amps) {
  const Eigen::Index j = amps.a.size();
  if (amps.b.size() != j || features.size() != 2 * j)
    throw ShapeError("features and amplitudes disagree on the number of basis functions");
  return features.head(j).dot(amps.a) + features.tail(j).dot(amps.b);
}

double marginalized_covariance(const Eigen::VectorXd& lag, const FrequencySet& freqs,
                               double sigma2) {
  if (lag.size() != freqs.omega.cols()) throw ShapeError("lag width does not match frequencies");
  const Eigen::VectorXd angle = freqs.omega * lag;
  return sigma2 * angle.array().cos().mean();
}

double marginalized_covariance(const STPoint& a, const STPoint& b, const Eigen::VectorXd& la,
                               const Eigen::VectorXd& lb, const FrequencySet& freqs,
                               double sigma2) {
  if (la.size() != lb.size()) throw ShapeError("latent vectors differ in length");
  Eigen::VectorXd h(3 + la.size());
  h << a.s1 - b.s1, a.s2 - b.s2, a.t - b.t, la - lb;
  return marginalized_covariance(h, freqs, sigma2);
}

double lag_distance(const Eigen::VectorXd& lag, const CovarianceParams& params) {
  if (lag.size() < 3) throw ShapeError("lag vectors need at least (s1, s2, t)");
  return lag.cwiseProduct(frequency_scale(params, lag.size() - 3)).norm();
}

bool FeatureCovarianceReport::mean_ok() const {
  for (const auto& r : rows)
    if (!r.mean_ok) return false;
  return true;
}

bool FeatureCovarianceReport::var_ok() const {
  for (const auto& r : rows)
    if (!r.var_ok) return false;
  return true;
}

double feature_covariance_variance(double m, double m2, double sigma2, Eigen::Index features,
                         VarianceForm form) {
  const double lead = form == VarianceForm::Exact ? 0.5 : 1.0;
  return std::max(0.0, sigma2 * sigma2 / static_cast<double>(features) * (lead + 0.5 * m2 - m * m));
}

void FeatureCovarianceReport::write_csv(std::ostream& os) const {
  os << "lag,distance,empirical_mean,theoretical_mean,empirical_var,theoretical_var,"
        "exact_var,literal_var,mean_tolerance,mean_ok,var_ok\n";
  const auto old_precision = os.precision(10);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    os << i << ',' << r.distance << ',' << r.empirical_mean << ',' << r.theoretical_mean << ','
       << r.empirical_var << ',' << r.theoretical_var << ',' << r.exact_var << ','
       << r.literal_var << ',' << r.mean_tolerance << ','
       << (r.mean_ok ? 1 : 0) << ',' << (r.var_ok ? 1 : 0) << '\n';
  }
  os.precision(old_precision);
}

FeatureCovarianceReport verify_feature_covariance(const std::vector<Eigen::VectorXd>& lags, Eigen::Index features,
                               std::size_t reps, const CovarianceParams& params,
                               std::uint64_t seed, double df_multiplier,
                               double var_rel_tolerance, VarianceForm variance_form) {
  if (reps < 100) throw ParameterError("verify_feature_covariance needs reps >= 100");
  if (lags.empty()) throw ParameterError("empty lag grid");
  params.validate();
  const Eigen::Index width = lags.front().size();
  for (const auto& h : lags)
    if (h.size() != width) throw ShapeError("lag vectors differ in width");

  Eigen::MatrixXd lag_matrix(width, static_cast<Eigen::Index>(lags.size()));
  for (std::size_t i = 0; i < lags.size(); ++i) lag_matrix.col(static_cast<Eigen::Index>(i)) = lags[i];

  // Each replication owns one row; the reduction below runs in a fixed order.
  Eigen::MatrixXd samples(static_cast<Eigen::Index>(reps), lag_matrix.cols());
  parallel_for(reps, [&](std::size_t r) {
    const FrequencySet freqs =
        sample_frequencies(features, params, width - 3, derive_seed(seed, r), df_multiplier);
    const Eigen::MatrixXd angle = freqs.omega * lag_matrix;
    samples.row(static_cast<Eigen::Index>(r)) =
        params.sigma2 * angle.array().cos().colwise().mean();
  });

  FeatureCovarianceReport report;
  report.features = features;
  report.reps = reps;
  report.var_rel_tolerance = var_rel_tolerance;
  report.variance_form = variance_form;
  const double n = static_cast<double>(reps);
  const double sigma4 = params.sigma2 * params.sigma2;
  for (std::size_t i = 0; i < lags.size(); ++i) {
    const auto col = samples.col(static_cast<Eigen::Index>(i));
    FeatureCovarianceRow row;
    row.lag = lags[i];
    row.distance = lag_distance(lags[i], params);
    row.empirical_mean = col.mean();
    row.empirical_var = (col.array() - row.empirical_mean).square().sum() / (n - 1.0);
    const double m = matern_correlation(row.distance, params.nu);
    const double m2 = matern_correlation(2.0 * row.distance, params.nu);
    row.theoretical_mean = params.sigma2 * m;
    row.exact_var = feature_covariance_variance(m, m2, params.sigma2, features, VarianceForm::Exact);
    row.literal_var = feature_covariance_variance(m, m2, params.sigma2, features, VarianceForm::Literal);
    row.theoretical_var = variance_form == VarianceForm::Exact ? row.exact_var : row.literal_var;
    row.mean_tolerance = 3.0 * std::sqrt(row.exact_var / n);
    const double mean_err = std::abs(row.empirical_mean - row.theoretical_mean);
    row.mean_ok = mean_err <= row.mean_tolerance + 1e-12 * params.sigma2;
    if (row.theoretical_var > 0.0) {
      row.var_ok = std::abs(row.empirical_var - row.theoretical_var) <=
                   var_rel_tolerance * row.theoretical_var;
    } else {
      row.var_ok = row.empirical_var <= 1e-24 * sigma4;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::vector<Eigen::VectorXd> lag_grid(std::size_t count, double max_distance,
                                      const CovarianceParams& params, Eigen::Index latent_dim) {
  if (count < 1) throw ParameterError("lag grid needs at least one lag");
  const Eigen::Index width = 3 + latent_dim;
  Eigen::VectorXd ranges(width);
  ranges << params.rho_s, params.rho_s, params.rho_t,
      Eigen::VectorXd::Constant(latent_dim, params.rho_l);
  const Eigen::VectorXd direction =
      ranges / std::sqrt(static_cast<double>(width));  // unit length in scaled units
  std::vector<Eigen::VectorXd> lags;
  lags.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double d =
        count == 1 ? 0.0 : max_distance * static_cast<double>(i) / static_cast<double>(count - 1);
    lags.push_back(d * direction);
  }
  return lags;
}

}  // namespace staci
