#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "staci/dataset.hpp"
#include "staci/metrics.hpp"
#include "staci/model.hpp"
#include "staci/svgd.hpp"

namespace staci {

enum class SplitKind { Random, PerTime };

/// Rows whose scores calibrate the conformal bands. Val keeps the scores out of
/// sample; Train reuses the fitted rows.
enum class CalibrationPoolKind { Train, Val };

struct ExperimentConfig {
  std::string profile = "desk";
  std::uint64_t seed = 0;
  std::string out_dir = "staci_out";

  std::string data_path;  // empty: simulate
  SimulationSpec simulation;

  SplitKind split = SplitKind::Random;
  SplitFractions fractions;
  double per_time_fraction = 0.1;
  std::vector<double> val_times;
  std::vector<double> test_times;

  ModelConfig model;
  SVGDConfig svgd;

  std::vector<std::size_t> neighbor_candidates{30, 40, 50, 60, 70, 80};
  std::size_t choose_holdout = 100;
  CalibrationPoolKind calibration_pool = CalibrationPoolKind::Val;
  double alpha = 0.05;
  NllMode nll_mode = NllMode::PerPoint;

  std::size_t grid_size = 50;       // export-grid: side of the spatial grid
  std::vector<double> grid_times{0.5};

  void validate() const;
};

/// Desk-scale defaults (runs in minutes on one core).
ExperimentConfig desk_profile();
/// Network and optimizer sizes of the full-scale experiments.
ExperimentConfig full_profile();
ExperimentConfig profile_config(const std::string& name);

/// Sets one documented key; throws ConfigError for unknown keys or bad values.
void set_option(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Parses `key = value` lines ('#' starts a comment). A `profile` key (or the
/// override) selects the base profile; the remaining keys are applied on top of it
/// in file order.
ExperimentConfig parse_config(std::istream& is, const std::optional<std::string>& profile_override = {},
                              const std::string& source = "<config>");
ExperimentConfig load_config(const std::string& path,
                             const std::optional<std::string>& profile_override = {});

/// Every key with its current value, one `key = value` line each, in a fixed order.
std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& config);
void write_config(std::ostream& os, const ExperimentConfig& config);

/// FNV-1a hash of the entries that determine the particle layout and the model.
std::uint64_t model_config_hash(const ModelConfig& model);

}  // namespace staci
