#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "staci/config.hpp"
#include "staci/dataset.hpp"
#include "staci/metrics.hpp"
#include "staci/model.hpp"
#include "staci/predict.hpp"
#include "staci/serialize.hpp"
#include "staci/svgd.hpp"

namespace staci {

/// Split, normalized data in original coordinates plus the map into model space.
struct PreparedData {
  Dataset data;               // original coordinates, normalized responses, split tags
  CoordinateScaler scaler;    // fitted on every row's coordinates
  std::vector<double> skipped_times;

  /// Rows of one split mapped to model space (coordinates in [0,1], normalized y).
  PointSet model_points(SplitTag tag) const;
  /// Rows of one split in original coordinates and original response units.
  PointSet original_points(SplitTag tag) const;
  /// The configured conformal calibration rows, original units.
  PointSet calibration_points(const ExperimentConfig& config) const;
};

PreparedData prepare_data(const ExperimentConfig& config);

/// Per-point predictions in original units. Conformal columns are NaN until calibrated.
struct PredictionTable {
  PointSet points;  // original coordinates; y optional
  std::vector<double> mean, sd, bayes_lo, bayes_hi, conf_lo, conf_hi;

  std::size_t size() const { return points.size(); }
  bool calibrated() const;
};

void write_predictions_csv(std::ostream& os, const PredictionTable& table);
void write_predictions_csv(const std::string& path, const PredictionTable& table);
PredictionTable read_predictions_csv(const std::string& path);

/// Trains an ensemble on the Train rows.
struct FitOutput {
  FittedModel fitted;
  TrainResult result;
};
FitOutput fit_stage(const StaciModel& model, const PreparedData& data, const ExperimentConfig& config);

/// Bayesian predictive summaries at raw (original-coordinate) points.
PredictionTable predict_stage(const StaciModel& model, const FittedModel& fitted,
                              std::span<const STPoint> points, double alpha);

/// Fills the conformal columns from the calibration rows (original units), picking
/// D among the configured candidates; returns the chosen D.
std::size_t calibrate_stage(const StaciModel& model, const FittedModel& fitted,
                            std::span<const STPoint> pool_original, PredictionTable& table,
                            const ExperimentConfig& config);

/// Conformal (or Bayesian) interval metrics over rows that carry a response.
EvalReport evaluate_table(const PredictionTable& table, double alpha, NllMode mode,
                          bool conformal);

/// Mean and sd on a regular spatial grid at each configured time; CSV columns
/// s1,s2,t,mean,sd followed by the ensemble-mean latent coordinates.
void export_grid(std::ostream& os, const StaciModel& model, const FittedModel& fitted,
                 const ExperimentConfig& config);

struct ExperimentResult {
  FittedModel fitted;
  TrainResult training;
  PredictionTable predictions;  // test rows
  EvalReport conformal;
  EvalReport bayes;
  std::size_t neighbors = 0;    // chosen D
  HyperValues posterior_hypers;
};

/// prepare -> fit -> predict -> calibrate -> evaluate. When write_artifacts is set,
/// writes ensemble.bin, predictions.csv, report.csv, report.txt, trace.csv and
/// config.txt into config.out_dir. Errors carry the failing stage's name.
ExperimentResult run_experiment(const ExperimentConfig& config, bool write_artifacts = true);

}  // namespace staci
