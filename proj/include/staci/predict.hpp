#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "staci/common.hpp"
#include "staci/kdtree.hpp"
#include "staci/model.hpp"
#include "staci/svgd.hpp"

namespace staci {

/// Ensemble predictive mean and total variance (epistemic spread plus nugget).
struct PredictiveMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  double tau2 = 0.0;
  bool single_particle = false;  // no epistemic spread available
};

/// Moments from an M x n matrix of per-particle predictions and a nugget.
PredictiveMoments predictive_moments(const Eigen::MatrixXd& particle_predictions, double tau2);

/// Uses the ensemble posterior-mean nugget.
PredictiveMoments posterior_mean_var(const StaciModel& model, const Ensemble& ensemble,
                                     std::span<const STPoint> points);

/// Standard-normal quantile.
double normal_quantile(double p);

/// mean +/- z sd with z the standard-normal quantile at 1 - alpha/2.
std::pair<double, double> credible_interval(double mean, double sd, double alpha);

struct PosteriorSummary {
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

std::vector<PosteriorSummary> summarize(const PredictiveMoments& moments, double alpha);

/// Nearest training points under [|s - s'| / rho_s]^2 + [|t - t'| / rho_t]^2.
/// Builds a kd-tree over the rescaled coordinates for n >= kBruteForceLimit and
/// rebuilds it when either range moves by more than 1%.
class NeighborIndex {
 public:
  static constexpr std::size_t kBruteForceLimit = 2000;

  NeighborIndex(std::span<const STPoint> train, double rho_s, double rho_t);

  std::size_t size() const { return train_.size(); }
  double rho_s() const { return rho_s_; }
  double rho_t() const { return rho_t_; }
  bool uses_tree() const { return tree_ != nullptr; }

  void set_ranges(double rho_s, double rho_t);

  /// D nearest training indices, skipping `exclude` (a training index) if given.
  std::vector<std::size_t> select(const STPoint& query, std::size_t count,
                                  std::optional<std::size_t> exclude = std::nullopt) const;

 private:
  void rebuild();
  Point3 scaled(const STPoint& p) const;

  std::span<const STPoint> train_;
  double rho_s_ = 1.0;
  double rho_t_ = 1.0;
  // Ranges the stored coordinates were scaled with; queries use the same ones.
  double built_rho_s_ = 1.0;
  double built_rho_t_ = 1.0;
  std::vector<Point3> scaled_;
  std::unique_ptr<KdTree3> tree_;
};

/// One-shot neighbor query.
std::vector<std::size_t> neighbor_select(const STPoint& query, std::span<const STPoint> train,
                                         std::size_t count, double rho_s, double rho_t);

struct ConformalBand {
  double lower = 0.0;
  double upper = 0.0;
  double quantile = 0.0;     // q, in units of the query sd
  std::size_t neighbors = 0; // K
  bool fallback = false;     // K too small for alpha; band spans the neighbor responses
};

/// Smallest order-statistic rank that admits a candidate, ceil((1 - alpha)(K + 1)).
std::size_t conformal_rank(std::size_t neighbors, double alpha);

/// Scores |y_j - mean_j| / sd_j over the neighbors.
std::vector<double> conformal_scores(std::span<const double> y, std::span<const double> mean,
                                     std::span<const double> sd);

/// mean_q +/- q sd_q with q the conformal_rank-th smallest neighbor score. A
/// candidate y belongs to the band iff its plausibility exceeds alpha, where the
/// plausibility counts the scores (own included) at least as large as its own.
ConformalBand conformal_interval(double query_mean, double query_sd, std::span<const double> y,
                                 std::span<const double> mean, std::span<const double> sd,
                                 double alpha);

/// Literal search: evaluates the plausibility on `grid_points` equally spaced
/// values over [min y_j, max y_j] and returns the extreme admitted values.
/// Returns nullopt when no grid value is admitted.
std::optional<ConformalBand> conformal_interval_grid(double query_mean, double query_sd,
                                                     std::span<const double> y,
                                                     std::span<const double> mean,
                                                     std::span<const double> sd, double alpha,
                                                     std::size_t grid_points = 2001);

/// Training points with the ensemble's in-sample predictions, used as the
/// calibration pool.
struct CalibrationPool {
  PointSet points;
  Eigen::VectorXd y;
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};

CalibrationPool make_calibration_pool(std::span<const STPoint> train,
                                      const PredictiveMoments& moments);

class ConformalCalibrator {
 public:
  /// Ranges are the ensemble posterior means on the natural scale.
  ConformalCalibrator(CalibrationPool pool, double rho_s, double rho_t);
  // The index refers into pool_.
  ConformalCalibrator(const ConformalCalibrator&) = delete;
  ConformalCalibrator& operator=(const ConformalCalibrator&) = delete;

  const CalibrationPool& pool() const { return pool_; }
  const NeighborIndex& index() const { return index_; }

  ConformalBand band(const STPoint& query, double mean, double sd, std::size_t count,
                     double alpha, std::optional<std::size_t> exclude = std::nullopt) const;

  std::vector<ConformalBand> bands(std::span<const STPoint> queries, const Eigen::VectorXd& mean,
                                   const Eigen::VectorXd& sd, std::size_t count,
                                   double alpha) const;

  /// Holds out `holdout` random pool points (deterministic in seed), builds
  /// leave-one-out bands for every candidate D and returns the D with the smallest
  /// mean interval score. Ties go to the earlier candidate.
  std::size_t choose_count(std::span<const std::size_t> candidates, double alpha,
                           std::uint64_t seed, std::size_t holdout = 100) const;

 private:
  CalibrationPool pool_;
  NeighborIndex index_;
};

}  // namespace staci
