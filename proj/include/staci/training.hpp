#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "staci/common.hpp"
#include "staci/model.hpp"
#include "staci/svgd.hpp"

namespace staci {

/// Posterior of a StaciModel over a fixed training set, in the form SVGD consumes.
class ModelTarget final : public SvgdTarget {
 public:
  /// Both arguments must outlive the target.
  ModelTarget(const StaciModel& model, std::span<const STPoint> data);

  std::size_t data_size() const override { return data_.size(); }
  LogJoint log_joint_grad(const Particle& particle,
                          std::span<const std::size_t> batch) const override;
  Eigen::VectorXd trainable_mask(Eigen::Index dim) const override;
  /// Natural-scale hyperparameters, in kHyperNames order.
  std::vector<std::string> summary_names() const override;
  std::vector<double> summarize(const Particle& particle) const override;

 private:
  const StaciModel& model_;
  std::span<const STPoint> data_;
};

/// M independently initialized particles; particle i uses a seed derived from (seed, i).
Ensemble init_ensemble(const StaciModel& model, std::size_t count, std::uint64_t seed);

/// Initializes and trains in one call.
TrainResult fit_model(const StaciModel& model, std::span<const STPoint> train,
                      const SVGDConfig& config);

/// Ensemble posterior mean of the natural-scale hyperparameters.
HyperValues posterior_mean_hypers(const StaciModel& model, const Ensemble& ensemble);

}  // namespace staci
