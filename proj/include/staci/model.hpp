#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "staci/common.hpp"
#include "staci/kernels.hpp"
#include "staci/latent.hpp"
#include "staci/particle.hpp"
#include "staci/spectral.hpp"

namespace staci {

/// Index of each log-scale hyperparameter inside the hyper block.
enum Hyper : int {
  kLogAlpha = 0,
  kLogNu,
  kLogRhoS,
  kLogRhoT,
  kLogRhoL,
  kLogSigma2,
  kLogTau2,
  kHyperCount
};

inline constexpr std::array<const char*, kHyperCount> kHyperNames = {
    "alpha", "nu", "rho_s", "rho_t", "rho_l", "sigma2", "tau2"};

/// Natural-scale hyperparameters.
struct HyperValues {
  double alpha = 0.01;
  double nu = 1.5;
  double rho_s = 0.135;
  double rho_t = 0.37;
  double rho_l = 0.135;
  double sigma2 = 1.0;
  double tau2 = 0.1;

  double get(Hyper h) const;
  void set(Hyper h, double v);
  CovarianceParams covariance() const;
};

/// Normal priors take (mean, variance) on the log scale; inverse-gamma priors
/// take (shape, scale) on the natural scale.
struct HyperPriors {
  double alpha_shape = 1.0, alpha_scale = 0.05;
  double log_nu_mean = 0.5, log_nu_var = 0.5;
  double log_rho_s_mean = -2.0, log_rho_s_var = 1.0;
  double log_rho_t_mean = -1.0, log_rho_t_var = 0.5;
  double log_rho_l_mean = -2.0, log_rho_l_var = 1.0;
  double sigma2_shape = 0.1, sigma2_scale = 0.1;
  double tau2_shape = 0.1, tau2_scale = 0.1;
};

struct ModelConfig {
  INRConfig inr;        // inr.latent_dim == 0 disables the latent field
  int num_features = 200;  // J
  double df_multiplier = kDefaultDfMultiplier;
  HyperPriors priors;
  HyperValues init;     // starting hyperparameters for every particle
  bool train_frequencies = true;
  bool train_hypers = true;

  Eigen::Index latent_dim() const { return inr.latent_dim; }
  void validate() const;
};

struct Segment {
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};

/// Block layout of Particle::theta: INR weights, frequency matrix (J x (3+p),
/// column-major), cosine amplitudes, sine amplitudes, log-hyperparameters.
struct ParticleLayout {
  Segment inr, freq, amp_a, amp_b, hyper;
  Eigen::Index features = 0;
  Eigen::Index input_dim = 3;  // 3 + p
  Eigen::Index total = 0;
};

// Closed-form log densities used by the prior.
double normal_logpdf(double x, double mean, double var);
double inv_gamma_logpdf(double x, double shape, double scale);
/// Log density of a zero-location multivariate t with diagonal scale.
double mvt_logpdf(const Eigen::VectorXd& x, double df, const Eigen::VectorXd& scale);

/// The full network: INR latent field, skip-concatenated [s, t, L], trainable
/// frequency layer with cos/sin features and a bias-free amplitude layer.
class StaciModel {
 public:
  explicit StaciModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const ParticleLayout& layout() const { return layout_; }
  Eigen::Index latent_dim() const { return config_.latent_dim(); }
  Eigen::Index parameter_count() const { return layout_.total; }
  const Inr* inr() const { return inr_ ? &*inr_ : nullptr; }

  /// INR ~ N(0, init.alpha), frequencies from the spectral sampler at the
  /// initial hyperparameters, amplitudes ~ N(0, sigma2 / J).
  Particle init_particle(std::uint64_t seed) const;

  /// Builds a particle from explicit blocks; inr may be empty when p = 0.
  Particle assemble(const INRWeights& inr, const FrequencySet& freqs, const AmplitudeSet& amps,
                    const HyperValues& hypers) const;

  HyperValues hypers(const Particle& p) const;
  FrequencySet frequencies(const Particle& p) const;
  AmplitudeSet amplitudes(const Particle& p) const;
  INRWeights inr_weights(const Particle& p) const;

  /// B x p latent matrix (B x 0 when the latent field is disabled).
  Eigen::MatrixXd latent(const Particle& p, const Eigen::MatrixXd& coords) const;

  Eigen::VectorXd forward(const Particle& p, const Eigen::MatrixXd& coords) const;
  Eigen::VectorXd forward(const Particle& p, std::span<const STPoint> batch) const;

  double log_prior(const Particle& p) const;
  /// Gradient of log_prior alone.
  LogJoint log_prior_grad(const Particle& p) const;

  /// (total_n / B) sum_i log N(y_i; Z_i, tau2).
  double log_likelihood(const Particle& p, std::span<const STPoint> batch,
                        std::size_t total_n) const;

  LogJoint log_joint_grad(const Particle& p, std::span<const STPoint> batch,
                          std::size_t total_n) const;

  /// 1 for coordinates SVGD may move, 0 for frozen blocks.
  Eigen::VectorXd trainable_mask() const;

 private:
  void check(const Particle& p) const;

  ModelConfig config_;
  ParticleLayout layout_;
  std::optional<Inr> inr_;
};

}  // namespace staci
