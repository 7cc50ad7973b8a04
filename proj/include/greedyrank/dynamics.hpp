#pragma once

#include <optional>
#include <vector>

#include "greedyrank/linalg.hpp"
#include "greedyrank/stack.hpp"

namespace greedyrank {

/// Largest width for which the d^2 x d^2 preconditioner is materialized.
inline constexpr Eigen::Index kOracleWidthCap = 8;

/// Preconditioner eigenvalue for the mode pair (r, r'):
///   sum_{j=1..N} sigma_r^(2(N-j)/N) * sigma_r'^(2(j-1)/N), with 0^0 = 1.
double mu(double sigma_r, double sigma_rp, int depth);

/// SVD of the effective matrix together with the full mu table.
struct ModalDecomposition {
  SvdResult svd;
  int depth = 1;
  Matrix mu;  // mu(r, r')

  Eigen::Index width() const { return svd.U.cols(); }
  /// vec_cf(u_r v_r'^T).
  std::vector<double> eigenvector(Eigen::Index r, Eigen::Index rp) const;
};

ModalDecomposition modal_decomposition(const Matrix& w_e, int depth);

/// P = sum_{r,r'} mu_{r,r'} e_{r,r'} e_{r,r'}^T (d^2 x d^2). Throws
/// std::invalid_argument when d exceeds the cap.
Matrix build_P(const Matrix& w_e, int depth, Eigen::Index cap = kOracleWidthCap);

/// unvec(-eta * P * vec(g)) through the materialized preconditioner.
Matrix predicted_delta(const Matrix& w_e, int depth, const Matrix& g, double eta,
                       Eigen::Index cap = kOracleWidthCap);

/// Same update as a double sum over modes: -eta * sum mu <u_r, g v_r'> u_r v_r'^T.
Matrix predicted_delta_modal(const Matrix& w_e, int depth, const Matrix& g, double eta);

/// Modal update from per-sample signals: the coefficient of mode (r, r') is
/// sum_s <u_r, dL/dz_N[s]> <v_r', z[s]>. Rows of both matrices are samples.
Matrix predicted_delta_modal(const Matrix& w_e, int depth, const Matrix& grad_latent, const Matrix& codes,
                             double eta);

/// dL/dW at W_e for the autoencoder: sum over samples of (dL/dz_N)^T z^T.
Matrix effective_gradient(const Matrix& grad_latent, const Matrix& codes);

struct ActualDelta {
  Matrix delta;
  double balance_residual = 0.0;
  /// False when the stack violates the balance condition beyond 1e-10; the
  /// prediction then carries no guarantee.
  bool balanced = true;
};

/// One plain GD step of size eta on every effective layer, driven by
/// dL/dW_e = g; returns the resulting change of the product.
ActualDelta actual_delta(const LinearStack& stack, const Matrix& g, double eta);

struct OrderCheck {
  double error_full = 0.0;  // ||actual - predicted|| at eta
  double error_half = 0.0;  // same at eta / 2
  std::optional<double> ratio;
  bool exact_within_fp = false;
  bool balanced = true;

  bool passed(double lo = 3.0, double hi = 5.0) const {
    return exact_within_fp || (ratio && *ratio >= lo && *ratio <= hi);
  }
};

inline constexpr double kExactWithinFp = 1e-14;

OrderCheck convergence_order_check(const LinearStack& stack, const Matrix& g, double eta);

/// One seeded trial: balanced d x d stack of depth N with singular values
/// uniform in [0.5, 1.5] and a standard Gaussian gradient.
OrderCheck random_order_trial(RandomSource& rng, Eigen::Index d, int depth, double eta);

}  // namespace greedyrank
