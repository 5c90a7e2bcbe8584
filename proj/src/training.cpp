#include "staci/training.hpp"

#include "staci/rng.hpp"

namespace staci {

ModelTarget::ModelTarget(const StaciModel& model, std::span<const STPoint> data)
    : model_(model), data_(data) {
  for (std::size_t i = 0; i < data_.size(); ++i)
    if (!data_[i].y) throw ParameterError("training point " + std::to_string(i) + " has no response");
}

LogJoint ModelTarget::log_joint_grad(const Particle& particle,
                                     std::span<const std::size_t> batch) const {
  PointSet pts;
  pts.reserve(batch.size());
  for (std::size_t idx : batch) {
    if (idx >= data_.size()) throw ParameterError("batch index out of range");
    pts.push_back(data_[idx]);
  }
  return model_.log_joint_grad(particle, pts, data_.size());
}

Eigen::VectorXd ModelTarget::trainable_mask(Eigen::Index dim) const {
  if (dim != model_.parameter_count()) throw ShapeError("mask requested for a foreign layout");
  return model_.trainable_mask();
}

std::vector<std::string> ModelTarget::summary_names() const {
  return {kHyperNames.begin(), kHyperNames.end()};
}

std::vector<double> ModelTarget::summarize(const Particle& particle) const {
  const HyperValues h = model_.hypers(particle);
  std::vector<double> out(kHyperCount);
  for (int k = 0; k < kHyperCount; ++k) out[static_cast<std::size_t>(k)] = h.get(static_cast<Hyper>(k));
  return out;
}

Ensemble init_ensemble(const StaciModel& model, std::size_t count, std::uint64_t seed) {
  if (count < 1) throw ParameterError("ensemble needs at least one particle");
  const std::uint64_t base = derive_seed(seed, SeedStream::Init);
  std::vector<Particle> ps;
  ps.reserve(count);
  for (std::size_t i = 0; i < count; ++i) ps.push_back(model.init_particle(derive_seed(base, i)));
  return Ensemble(std::move(ps));
}

TrainResult fit_model(const StaciModel& model, std::span<const STPoint> train,
                      const SVGDConfig& config) {
  const ModelTarget target(model, train);
  return staci::train(target, init_ensemble(model, config.particles, config.seed), config);
}

HyperValues posterior_mean_hypers(const StaciModel& model, const Ensemble& ensemble) {
  if (ensemble.size() == 0) throw ParameterError("empty ensemble");
  HyperValues mean;
  for (int k = 0; k < kHyperCount; ++k) {
    const auto h = static_cast<Hyper>(k);
    double s = 0.0;
    for (const auto& p : ensemble.particles) s += model.hypers(p).get(h);
    mean.set(h, s / static_cast<double>(ensemble.size()));
  }
  return mean;
}

}  // namespace staci
