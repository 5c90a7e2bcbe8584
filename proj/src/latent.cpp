#include "staci/latent.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "staci/rng.hpp"

namespace staci {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

void check_finite(const Eigen::MatrixXd& m, std::size_t layer) {
  if (!m.allFinite())
    throw NumericalError("non-finite activation in INR layer " + std::to_string(layer));
}

Eigen::MatrixXd dense(const Eigen::Ref<const Eigen::VectorXd>& params, const LayerSlot& slot,
                      const Eigen::MatrixXd& input) {
  const ConstMatMap w(params.data() + slot.weight_offset, slot.out, slot.in);
  const ConstVecMap b(params.data() + slot.bias_offset, slot.out);
  Eigen::MatrixXd out = input * w.transpose();
  out.rowwise() += b.transpose();
  return out;
}

// Gradient of the dense layer; writes dW and db into grad and returns d(input).
Eigen::MatrixXd dense_backward(const Eigen::Ref<const Eigen::VectorXd>& params,
                               const LayerSlot& slot, const Eigen::MatrixXd& input,
                               const Eigen::MatrixXd& d_out, Eigen::VectorXd& grad) {
  const ConstMatMap w(params.data() + slot.weight_offset, slot.out, slot.in);
  Eigen::Map<Eigen::MatrixXd>(grad.data() + slot.weight_offset, slot.out, slot.in) +=
      d_out.transpose() * input;
  Eigen::Map<Eigen::VectorXd>(grad.data() + slot.bias_offset, slot.out) +=
      d_out.colwise().sum().transpose();
  return d_out * w;
}

Eigen::MatrixXd apply_gelu(const Eigen::MatrixXd& a) { return a.unaryExpr(&gelu); }
Eigen::MatrixXd apply_gelu_derivative(const Eigen::MatrixXd& a) {
  return a.unaryExpr(&gelu_derivative);
}

}  // namespace

std::string to_string(Backbone b) {
  switch (b) {
    case Backbone::ResMLP: return "resmlp";
    case Backbone::FFNP: return "ffnp";
    case Backbone::FFNG: return "ffng";
  }
  return "unknown";
}

Backbone parse_backbone(const std::string& name) {
  if (name == "resmlp" || name == "ResMLP") return Backbone::ResMLP;
  if (name == "ffnp" || name == "FFNP") return Backbone::FFNP;
  if (name == "ffng" || name == "FFNG") return Backbone::FFNG;
  throw ConfigError("unknown INR backbone '" + name + "' (expected resmlp, ffnp or ffng)");
}

void INRConfig::validate() const {
  if (layers < 1) throw ParameterError("INR layers must be >= 1");
  if (width < 1) throw ParameterError("INR width must be >= 1");
  if (latent_dim < 1) throw ParameterError("INR latent dimension must be >= 1");
  if (backbone == Backbone::FFNP) {
    if (ffnp_freq_count < 1) throw ParameterError("FFNP frequency count must be >= 1");
    if (!std::isfinite(ffnp_freq_constant) || ffnp_freq_constant <= 0.0)
      throw ParameterError("FFNP frequency constant must be > 0");
  }
  if (backbone == Backbone::FFNG) {
    if (ffng_encode_size < 1) throw ParameterError("FFNG encode size must be >= 1");
    if (!std::isfinite(ffng_sigma) || ffng_sigma <= 0.0)
      throw ParameterError("FFNG sigma must be > 0");
  }
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_derivative(double x) {
  const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

Inr::Inr(INRConfig config) : config_(config) {
  config_.validate();
  switch (config_.backbone) {
    case Backbone::ResMLP: encoded_dim_ = 3; break;
    case Backbone::FFNP: encoded_dim_ = 3 * 2 * config_.ffnp_freq_count; break;
    case Backbone::FFNG: encoded_dim_ = 2 * config_.ffng_encode_size; break;
  }
  Eigen::Index offset = 0;
  auto add = [&](Eigen::Index in, Eigen::Index out) {
    LayerSlot slot{offset, offset + in * out, in, out};
    offset += in * out + out;
    layers_.push_back(slot);
  };
  add(encoded_dim_, config_.width);
  for (int l = 1; l < config_.layers; ++l) add(config_.width, config_.width);
  add(config_.width, config_.latent_dim);
  parameter_count_ = offset;
}

INRWeights Inr::init(double alpha, std::uint64_t seed) const {
  if (!std::isfinite(alpha) || alpha < 0.0) throw ParameterError("INR prior variance must be >= 0");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  INRWeights w;
  w.params.resize(parameter_count_);
  const double sd = std::sqrt(alpha);
  for (Eigen::Index i = 0; i < parameter_count_; ++i) w.params(i) = sd * normal(rng);
  if (config_.backbone == Backbone::FFNG) {
    w.encoding.resize(config_.ffng_encode_size, 3);
    for (Eigen::Index i = 0; i < w.encoding.size(); ++i)
      w.encoding(i) = config_.ffng_sigma * normal(rng);
  }
  return w;
}

Eigen::MatrixXd Inr::encode(const Eigen::MatrixXd& encoding, const Eigen::MatrixXd& coords) const {
  if (coords.cols() != 3) throw ShapeError("INR input must have 3 columns (s1, s2, t)");
  const Eigen::Index batch = coords.rows();
  switch (config_.backbone) {
    case Backbone::ResMLP: return coords;
    case Backbone::FFNP: {
      const int k_count = config_.ffnp_freq_count;
      Eigen::MatrixXd out(batch, encoded_dim_);
      for (int c = 0; c < 3; ++c) {
        for (int k = 1; k <= k_count; ++k) {
          const double f = 2.0 * std::numbers::pi * k * config_.ffnp_freq_constant / k_count;
          const Eigen::Index col = 2 * (c * k_count + (k - 1));
          const Eigen::ArrayXd arg = f * coords.col(c).array();
          out.col(col) = arg.sin().matrix();
          out.col(col + 1) = arg.cos().matrix();
        }
      }
      return out;
    }
    case Backbone::FFNG: {
      if (encoding.rows() != config_.ffng_encode_size || encoding.cols() != 3)
        throw ShapeError("FFNG encoding matrix has the wrong shape");
      const Eigen::MatrixXd arg = 2.0 * std::numbers::pi * coords * encoding.transpose();
      Eigen::MatrixXd out(batch, encoded_dim_);
      out.leftCols(config_.ffng_encode_size) = arg.array().sin().matrix();
      out.rightCols(config_.ffng_encode_size) = arg.array().cos().matrix();
      return out;
    }
  }
  throw ParameterError("unknown backbone");
}

Eigen::MatrixXd Inr::forward(const Eigen::Ref<const Eigen::VectorXd>& params,
                             const Eigen::MatrixXd& encoding, const Eigen::MatrixXd& coords,
                             Tape* tape) const {
  if (params.size() != parameter_count_)
    throw ShapeError("INR expects " + std::to_string(parameter_count_) + " parameters, got " +
                     std::to_string(params.size()));
  Eigen::MatrixXd h = encode(encoding, coords);
  if (tape != nullptr) {
    tape->coords = coords;
    tape->encoded = h;
    tape->pre.clear();
    tape->hidden.clear();
  }
  const bool residual = config_.backbone == Backbone::ResMLP;
  const std::size_t hidden_count = layers_.size() - 1;
  for (std::size_t l = 0; l < hidden_count; ++l) {
    Eigen::MatrixXd a = dense(params, layers_[l], h);
    Eigen::MatrixXd act = apply_gelu(a);
    if (residual && l > 0) act += h;
    check_finite(act, l);
    if (tape != nullptr) tape->pre.push_back(std::move(a));
    h = std::move(act);
    if (tape != nullptr) tape->hidden.push_back(h);
  }
  Eigen::MatrixXd out = dense(params, layers_.back(), h);
  check_finite(out, hidden_count);
  return out;
}

Eigen::VectorXd Inr::backward(const Eigen::Ref<const Eigen::VectorXd>& params,
                              const Eigen::MatrixXd& encoding, const Tape& tape,
                              const Eigen::MatrixXd& upstream, Eigen::MatrixXd* input_grad) const {
  const std::size_t hidden_count = layers_.size() - 1;
  if (tape.hidden.size() != hidden_count) throw ShapeError("INR tape does not match network");
  if (upstream.rows() != tape.coords.rows() || upstream.cols() != config_.latent_dim)
    throw ShapeError("upstream gradient must be batch x latent_dim");

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(parameter_count_);
  Eigen::MatrixXd d_h = dense_backward(params, layers_.back(), tape.hidden.back(), upstream, grad);
  const bool residual = config_.backbone == Backbone::ResMLP;
  for (std::size_t l = hidden_count; l-- > 0;) {
    const Eigen::MatrixXd& input = l == 0 ? tape.encoded : tape.hidden[l - 1];
    const Eigen::MatrixXd d_a = d_h.cwiseProduct(apply_gelu_derivative(tape.pre[l]));
    Eigen::MatrixXd d_in = dense_backward(params, layers_[l], input, d_a, grad);
    if (residual && l > 0) d_in += d_h;
    d_h = std::move(d_in);
  }

  if (input_grad != nullptr) {
    const Eigen::MatrixXd& x = tape.coords;
    switch (config_.backbone) {
      case Backbone::ResMLP: *input_grad = d_h; break;
      case Backbone::FFNP: {
        const int k_count = config_.ffnp_freq_count;
        input_grad->setZero(x.rows(), 3);
        for (int c = 0; c < 3; ++c) {
          for (int k = 1; k <= k_count; ++k) {
            const double f = 2.0 * std::numbers::pi * k * config_.ffnp_freq_constant / k_count;
            const Eigen::Index col = 2 * (c * k_count + (k - 1));
            const Eigen::ArrayXd arg = f * x.col(c).array();
            input_grad->col(c).array() +=
                f * (d_h.col(col).array() * arg.cos() - d_h.col(col + 1).array() * arg.sin());
          }
        }
        break;
      }
      case Backbone::FFNG: {
        const Eigen::Index m = config_.ffng_encode_size;
        const Eigen::ArrayXXd arg = (2.0 * std::numbers::pi * x * encoding.transpose()).array();
        const Eigen::MatrixXd d_arg = (d_h.leftCols(m).array() * arg.cos() -
                                       d_h.rightCols(m).array() * arg.sin())
                                          .matrix();
        *input_grad = 2.0 * std::numbers::pi * d_arg * encoding;
        break;
      }
    }
  }
  return grad;
}

INRWeights init_inr(const INRConfig& config, double alpha, std::uint64_t seed) {
  return Inr(config).init(alpha, seed);
}

Eigen::MatrixXd latent_forward(const INRWeights& weights, const INRConfig& config,
                               std::span<const STPoint> batch) {
  return Inr(config).forward(weights.params, weights.encoding, coordinate_matrix(batch));
}

Eigen::VectorXd latent_backward(const INRWeights& weights, const INRConfig& config,
                                std::span<const STPoint> batch, const Eigen::MatrixXd& upstream,
                                Eigen::MatrixXd* input_grad) {
  const Inr inr(config);
  Inr::Tape tape;
  inr.forward(weights.params, weights.encoding, coordinate_matrix(batch), &tape);
  return inr.backward(weights.params, weights.encoding, tape, upstream, input_grad);
}

}  // namespace staci
