#pragma once

#include <cmath>
#include <functional>

#include "greedyrank/autoencoder.hpp"

namespace testing {

using greedyrank::Matrix;

inline double rel_err(const Matrix& a, const Matrix& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

/// Central differences of f with respect to every entry of p (p is perturbed
/// in place and restored).
inline Matrix numeric_gradient(Matrix& p, const std::function<double()>& f, double h = 1e-6) {
  Matrix g(p.rows(), p.cols());
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double keep = p(i, j);
      p(i, j) = keep + h;
      const double up = f();
      p(i, j) = keep - h;
      const double down = f();
      p(i, j) = keep;
      g(i, j) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

/// Adds N(0, scale^2) noise to every trainable tensor. Zero biases put ReLU
/// pre-activations exactly on the kink for samples with all-off hidden units;
/// jittered parameters make the instance generic.
inline void jitter_parameters(greedyrank::AeModel& model, const Matrix& x, greedyrank::RandomSource& rng,
                              double scale = 0.1) {
  const greedyrank::ForwardCache cache = greedyrank::forward(model, x);
  const greedyrank::Gradients g = greedyrank::backward(model, cache, Matrix::Zero(x.rows(), x.cols()));
  for (const auto& slot : greedyrank::parameter_slots(model, g)) {
    *slot.value += greedyrank::gaussian_matrix(rng, slot.value->rows(), slot.value->cols(), 0.0, scale);
  }
}

}  // namespace testing
