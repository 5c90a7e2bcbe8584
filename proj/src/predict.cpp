#include "staci/predict.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "staci/metrics.hpp"
#include "staci/parallel.hpp"
#include "staci/rng.hpp"
#include "staci/training.hpp"

namespace staci {

PredictiveMoments predictive_moments(const Eigen::MatrixXd& preds, double tau2) {
  if (preds.rows() < 1) throw ParameterError("need at least one particle prediction");
  if (!(tau2 >= 0.0)) throw ParameterError("nugget must be nonnegative");
  PredictiveMoments out;
  out.tau2 = tau2;
  out.single_particle = preds.rows() == 1;
  out.mean = preds.colwise().mean().transpose();
  const Eigen::MatrixXd centered = preds.rowwise() - out.mean.transpose();
  out.var = (centered.array().square().colwise().sum() / static_cast<double>(preds.rows()))
                .transpose()
                .matrix();
  out.var.array() += tau2;
  return out;
}

PredictiveMoments posterior_mean_var(const StaciModel& model, const Ensemble& ensemble,
                                     std::span<const STPoint> points) {
  if (ensemble.size() == 0) throw ParameterError("empty ensemble");
  const Eigen::MatrixXd coords = coordinate_matrix(points);
  Eigen::MatrixXd preds(static_cast<Eigen::Index>(ensemble.size()), coords.rows());
  parallel_for(ensemble.size(), [&](std::size_t i) {
    preds.row(static_cast<Eigen::Index>(i)) =
        model.forward(ensemble.particles[i], coords).transpose();
  });
  return predictive_moments(preds, posterior_mean_hypers(model, ensemble).tau2);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ParameterError("quantile level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal(), p);
}

std::pair<double, double> credible_interval(double mean, double sd, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
  const double half = normal_quantile(1.0 - alpha / 2.0) * sd;
  return {mean - half, mean + half};
}

std::vector<PosteriorSummary> summarize(const PredictiveMoments& m, double alpha) {
  std::vector<PosteriorSummary> out(static_cast<std::size_t>(m.mean.size()));
  for (Eigen::Index i = 0; i < m.mean.size(); ++i) {
    auto& s = out[static_cast<std::size_t>(i)];
    s.mean = m.mean(i);
    s.sd = std::sqrt(m.var(i));
    std::tie(s.lower, s.upper) = credible_interval(s.mean, s.sd, alpha);
  }
  return out;
}

NeighborIndex::NeighborIndex(std::span<const STPoint> train, double rho_s, double rho_t)
    : train_(train) {
  if (!(rho_s > 0.0) || !(rho_t > 0.0)) throw ParameterError("neighbor ranges must be positive");
  rho_s_ = rho_s;
  rho_t_ = rho_t;
  rebuild();
}

Point3 NeighborIndex::scaled(const STPoint& p) const {
  return {p.s1 / built_rho_s_, p.s2 / built_rho_s_, p.t / built_rho_t_};
}

void NeighborIndex::rebuild() {
  built_rho_s_ = rho_s_;
  built_rho_t_ = rho_t_;
  scaled_.resize(train_.size());
  for (std::size_t i = 0; i < train_.size(); ++i) scaled_[i] = scaled(train_[i]);
  tree_.reset();
  if (train_.size() >= kBruteForceLimit) tree_ = std::make_unique<KdTree3>(scaled_);
}

void NeighborIndex::set_ranges(double rho_s, double rho_t) {
  if (!(rho_s > 0.0) || !(rho_t > 0.0)) throw ParameterError("neighbor ranges must be positive");
  const bool moved = std::abs(rho_s / built_rho_s_ - 1.0) > 0.01 ||
                     std::abs(rho_t / built_rho_t_ - 1.0) > 0.01;
  rho_s_ = rho_s;
  rho_t_ = rho_t;
  if (moved) rebuild();
}

std::vector<std::size_t> NeighborIndex::select(const STPoint& query, std::size_t count,
                                               std::optional<std::size_t> exclude) const {
  const std::size_t available = train_.size() - (exclude && *exclude < train_.size() ? 1 : 0);
  if (count > available)
    throw ParameterError("neighbor count " + std::to_string(count) + " exceeds the " +
                         std::to_string(available) + " available training points");
  const Point3 q = scaled(query);
  return tree_ ? tree_->nearest(q, count, exclude) : brute_force_nearest(scaled_, q, count, exclude);
}

std::vector<std::size_t> neighbor_select(const STPoint& query, std::span<const STPoint> train,
                                         std::size_t count, double rho_s, double rho_t) {
  return NeighborIndex(train, rho_s, rho_t).select(query, count);
}

std::size_t conformal_rank(std::size_t neighbors, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
  // Guard against (1 - alpha)(K + 1) landing a hair above an integer.
  const double r = (1.0 - alpha) * static_cast<double>(neighbors + 1);
  return static_cast<std::size_t>(std::ceil(r - 1e-9));
}

std::vector<double> conformal_scores(std::span<const double> y, std::span<const double> mean,
                                     std::span<const double> sd) {
  if (y.size() != mean.size() || y.size() != sd.size())
    throw ShapeError("neighbor responses, means and sds differ in length");
  std::vector<double> scores(y.size());
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (!(sd[j] > 0.0)) throw ParameterError("neighbor sd must be positive");
    scores[j] = std::abs(y[j] - mean[j]) / sd[j];
  }
  return scores;
}

namespace {

ConformalBand response_range(std::span<const double> y, std::size_t k) {
  ConformalBand b;
  b.neighbors = k;
  b.fallback = true;
  b.quantile = std::numeric_limits<double>::infinity();
  if (y.empty()) throw ParameterError("conformal band needs at least one neighbor");
  const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
  b.lower = *lo;
  b.upper = *hi;
  return b;
}

}  // namespace

ConformalBand conformal_interval(double query_mean, double query_sd, std::span<const double> y,
                                 std::span<const double> mean, std::span<const double> sd,
                                 double alpha) {
  if (!(query_sd > 0.0)) throw ParameterError("query sd must be positive");
  std::vector<double> scores = conformal_scores(y, mean, sd);
  const std::size_t k = scores.size();
  const std::size_t rank = conformal_rank(k, alpha);
  if (rank > k || k == 0) return response_range(y, k);
  std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                   scores.end());
  ConformalBand b;
  b.neighbors = k;
  b.quantile = scores[rank - 1];
  b.lower = query_mean - b.quantile * query_sd;
  b.upper = query_mean + b.quantile * query_sd;
  return b;
}

std::optional<ConformalBand> conformal_interval_grid(double query_mean, double query_sd,
                                                     std::span<const double> y,
                                                     std::span<const double> mean,
                                                     std::span<const double> sd, double alpha,
                                                     std::size_t grid_points) {
  if (!(query_sd > 0.0)) throw ParameterError("query sd must be positive");
  if (grid_points < 2) throw ParameterError("grid search needs at least two points");
  const std::vector<double> scores = conformal_scores(y, mean, sd);
  const std::size_t k = scores.size();
  if (conformal_rank(k, alpha) > k || k == 0) return response_range(y, k);
  const auto [lo_it, hi_it] = std::minmax_element(y.begin(), y.end());
  const double lo = *lo_it, hi = *hi_it;
  const double step = (hi - lo) / static_cast<double>(grid_points - 1);

  std::optional<ConformalBand> band;
  for (std::size_t g = 0; g < grid_points; ++g) {
    const double cand = lo + step * static_cast<double>(g);
    const double own = std::abs(cand - query_mean) / query_sd;
    std::size_t at_least = 1;  // the candidate's own score
    for (double s : scores)
      if (s >= own) ++at_least;
    const double plausibility = static_cast<double>(at_least) / static_cast<double>(k + 1);
    if (plausibility <= alpha) continue;
    if (!band) {
      band = ConformalBand{cand, cand, 0.0, k, false};
    } else {
      band->lower = std::min(band->lower, cand);
      band->upper = std::max(band->upper, cand);
    }
    band->quantile = std::max(band->quantile, own);
  }
  return band;
}

CalibrationPool make_calibration_pool(std::span<const STPoint> train,
                                      const PredictiveMoments& moments) {
  if (moments.mean.size() != static_cast<Eigen::Index>(train.size()))
    throw ShapeError("moments do not match the training set");
  CalibrationPool pool;
  pool.points.assign(train.begin(), train.end());
  pool.y = response_vector(train);
  pool.mean = moments.mean;
  pool.sd = moments.var.array().sqrt().matrix();
  return pool;
}

ConformalCalibrator::ConformalCalibrator(CalibrationPool pool, double rho_s, double rho_t)
    : pool_(std::move(pool)), index_(pool_.points, rho_s, rho_t) {
  const auto n = static_cast<Eigen::Index>(pool_.points.size());
  if (pool_.y.size() != n || pool_.mean.size() != n || pool_.sd.size() != n)
    throw ShapeError("calibration pool columns differ in length");
}

ConformalBand ConformalCalibrator::band(const STPoint& query, double mean, double sd,
                                        std::size_t count, double alpha,
                                        std::optional<std::size_t> exclude) const {
  const std::vector<std::size_t> nb = index_.select(query, count, exclude);
  std::vector<double> y(nb.size()), m(nb.size()), s(nb.size());
  for (std::size_t j = 0; j < nb.size(); ++j) {
    const auto r = static_cast<Eigen::Index>(nb[j]);
    y[j] = pool_.y(r);
    m[j] = pool_.mean(r);
    s[j] = pool_.sd(r);
  }
  return conformal_interval(mean, sd, y, m, s, alpha);
}

std::vector<ConformalBand> ConformalCalibrator::bands(std::span<const STPoint> queries,
                                                      const Eigen::VectorXd& mean,
                                                      const Eigen::VectorXd& sd,
                                                      std::size_t count, double alpha) const {
  if (mean.size() != static_cast<Eigen::Index>(queries.size()) || sd.size() != mean.size())
    throw ShapeError("query summaries do not match the query set");
  std::vector<ConformalBand> out(queries.size());
  parallel_for(queries.size(), [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    out[i] = band(queries[i], mean(r), sd(r), count, alpha);
  });
  return out;
}

std::size_t ConformalCalibrator::choose_count(std::span<const std::size_t> candidates,
                                              double alpha, std::uint64_t seed,
                                              std::size_t holdout) const {
  if (candidates.empty()) throw ParameterError("no neighbor-count candidates");
  if (candidates.size() == 1) return candidates.front();
  const std::size_t n = pool_.points.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, SeedStream::ChooseD));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(holdout, n));

  std::vector<double> score(candidates.size(), 0.0);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    std::vector<double> y(order.size()), lo(order.size()), hi(order.size());
    parallel_for(order.size(), [&](std::size_t i) {
      const auto r = static_cast<Eigen::Index>(order[i]);
      const ConformalBand b = band(pool_.points[order[i]], pool_.mean(r), pool_.sd(r),
                                   candidates[c], alpha, order[i]);
      y[i] = pool_.y(r);
      lo[i] = b.lower;
      hi[i] = b.upper;
    });
    score[c] = interval_score(y, lo, hi, alpha);
  }
  const auto best = std::min_element(score.begin(), score.end()) - score.begin();
  return candidates[static_cast<std::size_t>(best)];
}

}  // namespace staci
