#pragma once

#include <variant>
#include <vector>

#include "greedyrank/linalg.hpp"

namespace greedyrank {

/// N square layers of width d. The learnable matrices are the hatted
/// weights; the layer actually applied is alpha * layers[i], and layers[0]
/// acts first, so the effective matrix is W_N ... W_1.
struct LinearStack {
  Eigen::Index width = 0;
  double alpha = 1.0;
  std::vector<Matrix> layers;
  /// Learning-rate multiplier for this parameter group; 1/N unless overridden.
  double lr_group_scale = 1.0;

  int depth() const noexcept { return static_cast<int>(layers.size()); }
  Matrix effective_layer(int i) const { return alpha * layers[static_cast<std::size_t>(i)]; }
};

/// Kaiming (fan-in) Gaussian initialization, std = sqrt(2 / ((1 + a^2) d))
/// for negative slope a; alpha is forced to 1. The default a = sqrt(5) is
/// the usual default for linear layers; a = 0 gives std sqrt(2/d).
struct HeInit {
  double negative_slope = 2.23606797749978969641;  // sqrt(5)
};

/// Haar-orthogonal layers scaled so every singular value of the effective
/// matrix equals total_scale.
struct OrthogonalInit {
  double total_scale = 1.0;
  double alpha = 1.0;
};

using StackInit = std::variant<HeInit, OrthogonalInit>;

LinearStack init_stack(RandomSource& rng, Eigen::Index width, int depth, const StackInit& kind);

/// Layers with prescribed singular values: W_i = Q_i diag(s^(1/N)) Q_{i-1}^T
/// for random orthogonal Q_i. Exactly balanced for any spectrum.
LinearStack balanced_stack(RandomSource& rng, std::span<const double> spectrum, int depth);

Matrix effective_matrix(const LinearStack& stack);

/// Gradient of a loss with dL/dW_e = g w.r.t. every effective layer W_i:
/// (W_N...W_{i+1})^T g (W_{i-1}...W_1)^T.
std::vector<Matrix> layer_gradients(const LinearStack& stack, const Matrix& g);

/// Two-layer bottleneck with shared dimension k: z -> up * (down * z).
struct ExplicitSubnet {
  Matrix down;  // k x d
  Matrix up;    // d x k

  Eigen::Index width() const noexcept { return down.cols(); }
  Eigen::Index shared_dim() const noexcept { return down.rows(); }
  Matrix product() const { return up * down; }
};

ExplicitSubnet make_explicit(RandomSource& rng, Eigen::Index width, Eigen::Index k);

/// Best rank-k factorization of w_e from its truncated SVD:
/// up = U_k sqrt(S_k), down = sqrt(S_k) V_k^T.
ExplicitSubnet warm_start_from(const Matrix& w_e, Eigen::Index k);

}  // namespace greedyrank
