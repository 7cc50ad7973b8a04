#include "greedyrank/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "greedyrank/spectrum.hpp"

namespace greedyrank {

double mu(double sigma_r, double sigma_rp, int depth) {
  if (sigma_r < 0.0 || sigma_rp < 0.0) throw std::invalid_argument("mu: singular values must be non-negative");
  if (depth < 1) throw std::invalid_argument("mu: depth must be >= 1");
  const double n = depth;
  double total = 0.0;
  for (int j = 1; j <= depth; ++j) {
    // std::pow(0, 0) == 1
    total += std::pow(sigma_r, 2.0 * (depth - j) / n) * std::pow(sigma_rp, 2.0 * (j - 1) / n);
  }
  return total;
}

std::vector<double> ModalDecomposition::eigenvector(Eigen::Index r, Eigen::Index rp) const {
  return vec_cf(svd.U.col(r) * svd.V.col(rp).transpose());
}

ModalDecomposition modal_decomposition(const Matrix& w_e, int depth) {
  if (w_e.rows() != w_e.cols()) throw std::invalid_argument("modal_decomposition: effective matrix must be square");
  ModalDecomposition md;
  md.svd = svd(w_e);
  md.depth = depth;
  const Eigen::Index d = w_e.rows();
  md.mu.resize(d, d);
  for (Eigen::Index r = 0; r < d; ++r) {
    for (Eigen::Index rp = 0; rp < d; ++rp) {
      md.mu(r, rp) = mu(md.svd.singular_values[static_cast<std::size_t>(r)],
                        md.svd.singular_values[static_cast<std::size_t>(rp)], depth);
    }
  }
  return md;
}

Matrix build_P(const Matrix& w_e, int depth, Eigen::Index cap) {
  if (w_e.rows() > cap) {
    throw std::invalid_argument("build_P: width " + std::to_string(w_e.rows()) + " exceeds oracle cap " +
                                std::to_string(cap));
  }
  const ModalDecomposition md = modal_decomposition(w_e, depth);
  const Eigen::Index d = md.width();
  // Column r + d*r' of basis is e_{r,r'} = v_r' (x) u_r.
  Matrix basis(d * d, d * d);
  Eigen::VectorXd weights(d * d);
  for (Eigen::Index rp = 0; rp < d; ++rp) {
    for (Eigen::Index r = 0; r < d; ++r) {
      const Eigen::Index col = r + d * rp;
      for (Eigen::Index j = 0; j < d; ++j) {
        basis.block(j * d, col, d, 1) = md.svd.V(j, rp) * md.svd.U.col(r);
      }
      weights[col] = md.mu(r, rp);
    }
  }
  return basis * weights.asDiagonal() * basis.transpose();
}

Matrix predicted_delta(const Matrix& w_e, int depth, const Matrix& g, double eta, Eigen::Index cap) {
  if (g.rows() != w_e.rows() || g.cols() != w_e.cols()) throw std::invalid_argument("predicted_delta: shape mismatch");
  const Matrix p = build_P(w_e, depth, cap);
  const Eigen::Map<const Eigen::VectorXd> vg(g.data(), g.size());
  const Eigen::VectorXd step = -eta * (p * vg);
  return unvec_cf(std::span<const double>(step.data(), static_cast<std::size_t>(step.size())), g.rows(), g.cols());
}

Matrix predicted_delta_modal(const Matrix& w_e, int depth, const Matrix& g, double eta) {
  if (g.rows() != w_e.rows() || g.cols() != w_e.cols()) {
    throw std::invalid_argument("predicted_delta_modal: shape mismatch");
  }
  const ModalDecomposition md = modal_decomposition(w_e, depth);
  const Matrix& u = md.svd.U;
  const Matrix& v = md.svd.V;
  const Eigen::Index d = md.width();
  Matrix delta = Matrix::Zero(d, d);
  for (Eigen::Index r = 0; r < d; ++r) {
    const Eigen::RowVectorXd ug = u.col(r).transpose() * g;
    for (Eigen::Index rp = 0; rp < d; ++rp) {
      const double coeff = md.mu(r, rp) * ug.dot(v.col(rp));
      delta.noalias() -= eta * coeff * u.col(r) * v.col(rp).transpose();
    }
  }
  return delta;
}

Matrix predicted_delta_modal(const Matrix& w_e, int depth, const Matrix& grad_latent, const Matrix& codes,
                             double eta) {
  const Eigen::Index d = w_e.rows();
  if (w_e.cols() != d || grad_latent.cols() != d || codes.cols() != d || grad_latent.rows() != codes.rows()) {
    throw std::invalid_argument("predicted_delta_modal: shape mismatch");
  }
  const ModalDecomposition md = modal_decomposition(w_e, depth);
  const Matrix& u = md.svd.U;
  const Matrix& v = md.svd.V;
  Matrix delta = Matrix::Zero(d, d);
  for (Eigen::Index r = 0; r < d; ++r) {
    for (Eigen::Index rp = 0; rp < d; ++rp) {
      double align = 0.0;
      for (Eigen::Index s = 0; s < codes.rows(); ++s) {
        align += grad_latent.row(s).dot(u.col(r)) * codes.row(s).dot(v.col(rp));
      }
      delta.noalias() -= eta * md.mu(r, rp) * align * u.col(r) * v.col(rp).transpose();
    }
  }
  return delta;
}

Matrix effective_gradient(const Matrix& grad_latent, const Matrix& codes) {
  if (grad_latent.rows() != codes.rows()) throw std::invalid_argument("effective_gradient: batch size mismatch");
  return grad_latent.transpose() * codes;
}

ActualDelta actual_delta(const LinearStack& stack, const Matrix& g, double eta) {
  ActualDelta out;
  out.balance_residual = balance_residual(stack);
  out.balanced = out.balance_residual <= 1e-10;

  const std::vector<Matrix> grads = layer_gradients(stack, g);
  Matrix before = Matrix::Identity(stack.width, stack.width);
  Matrix after = Matrix::Identity(stack.width, stack.width);
  for (int i = 0; i < stack.depth(); ++i) {
    const Matrix w = stack.effective_layer(i);
    before = w * before;
    after = (w - eta * grads[static_cast<std::size_t>(i)]) * after;
  }
  out.delta = after - before;
  return out;
}

OrderCheck convergence_order_check(const LinearStack& stack, const Matrix& g, double eta) {
  const Matrix w_e = effective_matrix(stack);
  OrderCheck check;
  const ActualDelta full = actual_delta(stack, g, eta);
  const ActualDelta half = actual_delta(stack, g, 0.5 * eta);
  check.balanced = full.balanced;
  check.error_full = (full.delta - predicted_delta(w_e, stack.depth(), g, eta)).norm();
  check.error_half = (half.delta - predicted_delta(w_e, stack.depth(), g, 0.5 * eta)).norm();
  if (check.error_half < kExactWithinFp) {
    check.exact_within_fp = true;
  } else {
    check.ratio = check.error_full / check.error_half;
  }
  return check;
}

OrderCheck random_order_trial(RandomSource& rng, Eigen::Index d, int depth, double eta) {
  std::vector<double> spectrum(static_cast<std::size_t>(d));
  for (auto& s : spectrum) s = 0.5 + rng.uniform();
  std::sort(spectrum.begin(), spectrum.end(), std::greater<>());
  const LinearStack stack = balanced_stack(rng, spectrum, depth);
  const Matrix g = gaussian_matrix(rng, d, d, 0.0, 1.0);
  return convergence_order_check(stack, g, eta);
}

}  // namespace greedyrank
