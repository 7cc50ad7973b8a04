#pragma once

#include <cstdint>
#include <string_view>
#include <variant>
#include <vector>

#include "greedyrank/linalg.hpp"
#include "greedyrank/stack.hpp"

namespace greedyrank {

enum class Activation { Relu, Tanh };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

/// Fully connected network applied to row-sample matrices. The activation
/// follows every layer except the last, which is linear. A layer whose bias
/// is empty (0 x 0) has no bias term.
struct Mlp {
  std::vector<Matrix> weights;  // out x in
  std::vector<Matrix> biases;   // 1 x out, or empty
  Activation activation = Activation::Relu;

  Eigen::Index input_dim() const { return weights.front().cols(); }
  Eigen::Index output_dim() const { return weights.back().rows(); }
};

using Bottleneck = std::variant<std::monostate, LinearStack, ExplicitSubnet>;

struct AeModel {
  Mlp encoder;
  Bottleneck bottleneck;
  Mlp decoder;
  /// Bumped whenever parameters change; forward caches remember it.
  std::uint64_t version = 0;

  Eigen::Index input_dim() const { return encoder.input_dim(); }
  Eigen::Index latent_dim() const { return encoder.output_dim(); }
  bool has_stack() const { return std::holds_alternative<LinearStack>(bottleneck); }
  bool has_explicit() const { return std::holds_alternative<ExplicitSubnet>(bottleneck); }
  LinearStack& stack() { return std::get<LinearStack>(bottleneck); }
  const LinearStack& stack() const { return std::get<LinearStack>(bottleneck); }
};

/// Bias-free linear encoder (d x D) and decoder (D x d) with N(0, init_std)
/// weights.
AeModel make_linear_ae(RandomSource& rng, Eigen::Index input_dim, Eigen::Index latent_dim,
                       double init_std, Bottleneck bottleneck);

/// Encoder input -> hidden... -> latent and the mirrored decoder, He-normal
/// weights and zero biases.
AeModel make_mlp_ae(RandomSource& rng, Eigen::Index input_dim, const std::vector<Eigen::Index>& hidden,
                    Eigen::Index latent_dim, Activation activation, Bottleneck bottleneck);

/// Effective bottleneck map: W_e for a stack, up*down for an explicit subnet,
/// identity for vanilla models.
Matrix bottleneck_matrix(const AeModel& model);

struct MlpCache {
  std::vector<Matrix> inputs;  // input of every layer
  std::vector<Matrix> pre;     // pre-activation of every layer
};

struct ForwardCache {
  MlpCache encoder;
  /// codes[0] = z, codes[i] = z_i, codes.back() = z_N.
  std::vector<Matrix> codes;
  MlpCache decoder;
  Matrix output;
  std::uint64_t version = 0;

  const Matrix& latent() const { return codes.back(); }
};

ForwardCache forward(const AeModel& model, const Matrix& x);

/// Encoder plus bottleneck only.
Matrix latent_codes(const AeModel& model, const Matrix& x);

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // dL/dX'
};

/// Mean of squared errors over all n*D entries.
LossResult mse_loss(const Matrix& x, const Matrix& reconstruction);

struct MlpGrads {
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
};

struct Gradients {
  MlpGrads encoder;
  /// Per hatted layer for a stack; {down, up} for an explicit subnet.
  std::vector<Matrix> bottleneck;
  MlpGrads decoder;
};

/// Throws std::logic_error if the cache was produced for an older parameter
/// version.
Gradients backward(const AeModel& model, const ForwardCache& cache, const Matrix& grad_output);

enum class ParamGroup { Encoder, Bottleneck, Decoder };

struct ParamSlot {
  Matrix* value;
  const Matrix* grad;
  ParamGroup group;
};

/// Encoder, bottleneck, decoder; within each, weights before biases, in layer
/// order.
std::vector<ParamSlot> parameter_slots(AeModel& model, const Gradients& grads);

}  // namespace greedyrank
