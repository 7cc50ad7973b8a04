#include "greedyrank/stack.hpp"

#include <cmath>
#include <string>

namespace greedyrank {

LinearStack init_stack(RandomSource& rng, Eigen::Index width, int depth, const StackInit& kind) {
  if (width < 1) throw std::invalid_argument("init_stack: width must be >= 1");
  if (depth < 1) throw std::invalid_argument("init_stack: depth must be >= 1");

  LinearStack stack;
  stack.width = width;
  stack.lr_group_scale = 1.0 / depth;
  stack.layers.reserve(static_cast<std::size_t>(depth));

  if (const auto* he = std::get_if<HeInit>(&kind)) {
    if (!(he->negative_slope >= 0.0)) throw std::invalid_argument("init_stack: He negative slope must be >= 0");
    const double a2 = he->negative_slope * he->negative_slope;
    const double stddev = std::sqrt(2.0 / ((1.0 + a2) * static_cast<double>(width)));
    for (int i = 0; i < depth; ++i) stack.layers.push_back(gaussian_matrix(rng, width, width, 0.0, stddev));
    return stack;
  }

  const auto& orth = std::get<OrthogonalInit>(kind);
  if (!(orth.total_scale > 0.0)) throw std::invalid_argument("init_stack: total_scale must be > 0");
  if (!(orth.alpha >= 1.0)) throw std::invalid_argument("init_stack: alpha must be >= 1");
  stack.alpha = orth.alpha;
  const double per_layer = std::pow(orth.total_scale, 1.0 / depth) / orth.alpha;
  for (int i = 0; i < depth; ++i) stack.layers.push_back(per_layer * haar_orthogonal(rng, width));
  return stack;
}

LinearStack balanced_stack(RandomSource& rng, std::span<const double> spectrum, int depth) {
  if (spectrum.empty()) throw std::invalid_argument("balanced_stack: empty spectrum");
  if (depth < 1) throw std::invalid_argument("balanced_stack: depth must be >= 1");
  const auto d = static_cast<Eigen::Index>(spectrum.size());
  Eigen::VectorXd root(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (spectrum[i] < 0.0) throw std::invalid_argument("balanced_stack: negative singular value");
    root[i] = std::pow(spectrum[i], 1.0 / depth);
  }
  LinearStack stack;
  stack.width = d;
  stack.lr_group_scale = 1.0 / depth;
  Matrix prev = haar_orthogonal(rng, d);
  for (int i = 0; i < depth; ++i) {
    Matrix next = haar_orthogonal(rng, d);
    stack.layers.push_back(next * root.asDiagonal() * prev.transpose());
    prev = std::move(next);
  }
  return stack;
}

Matrix effective_matrix(const LinearStack& stack) {
  Matrix w = Matrix::Identity(stack.width, stack.width);
  for (const auto& layer : stack.layers) w = (stack.alpha * layer) * w;
  return w;
}

std::vector<Matrix> layer_gradients(const LinearStack& stack, const Matrix& g) {
  const int n = stack.depth();
  const Eigen::Index d = stack.width;
  if (g.rows() != d || g.cols() != d) throw std::invalid_argument("layer_gradients: gradient shape mismatch");

  // below[i] = W_{i-1}...W_1 (identity for i = 0), above[i] = W_N...W_{i+1}.
  std::vector<Matrix> below(static_cast<std::size_t>(n));
  std::vector<Matrix> above(static_cast<std::size_t>(n));
  below[0] = Matrix::Identity(d, d);
  for (int i = 1; i < n; ++i) below[i] = stack.effective_layer(i - 1) * below[i - 1];
  above[n - 1] = Matrix::Identity(d, d);
  for (int i = n - 2; i >= 0; --i) above[i] = above[i + 1] * stack.effective_layer(i + 1);

  std::vector<Matrix> grads;
  grads.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) grads.push_back(above[i].transpose() * g * below[i].transpose());
  return grads;
}

ExplicitSubnet make_explicit(RandomSource& rng, Eigen::Index width, Eigen::Index k) {
  if (k < 1 || k > width) {
    throw std::invalid_argument("make_explicit: shared dimension " + std::to_string(k) +
                                " outside [1, " + std::to_string(width) + "]");
  }
  ExplicitSubnet net;
  net.down = gaussian_matrix(rng, k, width, 0.0, std::sqrt(2.0 / static_cast<double>(width)));
  net.up = gaussian_matrix(rng, width, k, 0.0, std::sqrt(2.0 / static_cast<double>(k)));
  return net;
}

ExplicitSubnet warm_start_from(const Matrix& w_e, Eigen::Index k) {
  if (w_e.rows() != w_e.cols()) throw std::invalid_argument("warm_start_from: effective matrix must be square");
  if (k < 1 || k > w_e.rows()) {
    throw std::invalid_argument("warm_start_from: shared dimension " + std::to_string(k) +
                                " outside [1, " + std::to_string(w_e.rows()) + "]");
  }
  const SvdResult s = svd(w_e);
  Eigen::VectorXd root(k);
  for (Eigen::Index i = 0; i < k; ++i) root[i] = std::sqrt(s.singular_values[static_cast<std::size_t>(i)]);
  ExplicitSubnet net;
  net.up = s.U.leftCols(k) * root.asDiagonal();
  net.down = root.asDiagonal() * s.V.leftCols(k).transpose();
  return net;
}

}  // namespace greedyrank
