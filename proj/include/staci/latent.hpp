#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "staci/common.hpp"

namespace staci {

enum class Backbone { ResMLP, FFNP, FFNG };

std::string to_string(Backbone b);
Backbone parse_backbone(const std::string& name);

/// Implicit neural representation mapping (s1, s2, t) to a latent vector L.
struct INRConfig {
  Backbone backbone = Backbone::FFNP;
  int layers = 3;       // hidden layers, all of width `width`
  int width = 64;
  int latent_dim = 8;   // p
  double ffnp_freq_constant = 5.0;
  int ffnp_freq_count = 8;
  double ffng_sigma = 1.0;
  int ffng_encode_size = 32;

  void validate() const;
};

/// Trainable parameters plus the frozen Gaussian encoding matrix (FFNG only,
/// ffng_encode_size x 3; empty for the other backbones).
struct INRWeights {
  Eigen::VectorXd params;
  Eigen::MatrixXd encoding;
};

/// Location of one dense layer inside the flat parameter vector. The weight
/// block is `out x in`, column-major; the bias follows it.
struct LayerSlot {
  Eigen::Index weight_offset = 0;
  Eigen::Index bias_offset = 0;
  Eigen::Index in = 0;
  Eigen::Index out = 0;
};

/// GELU, tanh form. Deviates from the erf form by less than 1e-3 everywhere.
double gelu(double x);
double gelu_derivative(double x);

class Inr {
 public:
  explicit Inr(INRConfig config);

  const INRConfig& config() const { return config_; }
  Eigen::Index parameter_count() const { return parameter_count_; }
  Eigen::Index encoded_dim() const { return encoded_dim_; }
  Eigen::Index latent_dim() const { return config_.latent_dim; }
  /// Hidden layers in order, followed by the linear head.
  const std::vector<LayerSlot>& layers() const { return layers_; }

  /// Trainable weights ~ N(0, alpha); FFNG encoding ~ N(0, ffng_sigma^2).
  INRWeights init(double alpha, std::uint64_t seed) const;

  /// Intermediate values kept for the reverse pass.
  struct Tape {
    Eigen::MatrixXd coords;
    Eigen::MatrixXd encoded;
    std::vector<Eigen::MatrixXd> pre;     // pre-activations per hidden layer
    std::vector<Eigen::MatrixXd> hidden;  // outputs per hidden layer
  };

  /// Input encoding for a batch of coordinates (B x 3).
  Eigen::MatrixXd encode(const Eigen::MatrixXd& encoding, const Eigen::MatrixXd& coords) const;

  /// B x p latent matrix.
  Eigen::MatrixXd forward(const Eigen::Ref<const Eigen::VectorXd>& params,
                          const Eigen::MatrixXd& encoding, const Eigen::MatrixXd& coords,
                          Tape* tape = nullptr) const;

  /// Reverse pass contracting with `upstream` (B x p). Returns the gradient in
  /// the parameter layout; fills input_grad (B x 3) when non-null.
  Eigen::VectorXd backward(const Eigen::Ref<const Eigen::VectorXd>& params,
                           const Eigen::MatrixXd& encoding, const Tape& tape,
                           const Eigen::MatrixXd& upstream,
                           Eigen::MatrixXd* input_grad = nullptr) const;

 private:
  INRConfig config_;
  Eigen::Index encoded_dim_ = 0;
  Eigen::Index parameter_count_ = 0;
  std::vector<LayerSlot> layers_;
};

INRWeights init_inr(const INRConfig& config, double alpha, std::uint64_t seed);

Eigen::MatrixXd latent_forward(const INRWeights& weights, const INRConfig& config,
                               std::span<const STPoint> batch);

/// Gradient of sum(upstream .* latent_forward) with respect to the trainable weights.
Eigen::VectorXd latent_backward(const INRWeights& weights, const INRConfig& config,
                                std::span<const STPoint> batch, const Eigen::MatrixXd& upstream,
                                Eigen::MatrixXd* input_grad = nullptr);

}  // namespace staci
