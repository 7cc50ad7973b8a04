#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "greedyrank/linalg.hpp"
#include "greedyrank/stack.hpp"

namespace greedyrank {

inline constexpr double kDefaultRankThreshold = 0.01;

struct SpectrumReport {
  std::vector<double> singular_values;
  std::vector<double> normalized_values;  // sigma_i / sigma_1; all zero when sigma_1 = 0
  double threshold = kDefaultRankThreshold;
  std::size_t rank = 0;
};

/// Number of singular values with sigma_i / sigma_1 strictly above the
/// threshold; 0 for an all-zero spectrum. Input must be non-negative and
/// non-increasing.
std::size_t estimate_rank(std::span<const double> singular_values, double threshold = kDefaultRankThreshold);

SpectrumReport spectrum_report(std::vector<double> singular_values, double threshold = kDefaultRankThreshold);

/// Spectrum of the n x d code matrix.
SpectrumReport latent_spectrum(const Matrix& codes, double threshold = kDefaultRankThreshold);

/// max_i ||W_{i+1}^T W_{i+1} - W_i W_i^T||_F over effective layers; 0 for N < 2.
double balance_residual(const LinearStack& stack);

}  // namespace greedyrank
