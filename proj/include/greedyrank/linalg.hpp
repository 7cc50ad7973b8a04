#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace greedyrank {

/// Dense column-major matrix of 64-bit reals. Samples are stored as rows.
using Matrix = Eigen::MatrixXd;

/// Raised when an iterative numeric routine fails to converge.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Seeded pseudorandom source: mt19937_64 engine, uniforms from the top 53
/// bits of one engine output, normals from Box-Muller (cosine branch only, so
/// every normal consumes exactly two engine outputs).
class RandomSource {
 public:
  static constexpr std::string_view kGeneratorName = "mt19937_64/box-muller";

  explicit RandomSource(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Derives an independent child stream; used to decouple data, init, and
  /// batching draws.
  RandomSource split();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

struct SvdResult {
  Matrix U;                            // m x k
  std::vector<double> singular_values; // non-increasing, length k = min(m, n)
  Matrix V;                            // n x k
};

/// I.i.d. normal draws, filled row by row.
Matrix gaussian_matrix(RandomSource& rng, Eigen::Index rows, Eigen::Index cols,
                       double mean, double stddev);

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with each
/// column of Q multiplied by sign(R_jj).
Matrix haar_orthogonal(RandomSource& rng, Eigen::Index n);

/// One-sided (Hestenes) Jacobi SVD. Throws NumericError if the sweep cap is
/// reached.
SvdResult svd(const Matrix& a);
/// Singular values only; skips accumulation of the singular vectors.
std::vector<double> singular_values(const Matrix& a);

inline constexpr int kSvdSweepCap = 10000;

/// Column-first vectorization.
std::vector<double> vec_cf(const Matrix& a);
Matrix unvec_cf(std::span<const double> v, Eigen::Index rows, Eigen::Index cols);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
double frobenius_norm(const Matrix& a);
Matrix scaled(const Matrix& a, double factor);

bool all_finite(const Matrix& a);

/// Keeps mid-sized matrix temporaries on the heap instead of fresh mmap
/// pages (glibc only; no-op elsewhere). Call once at program start.
void tune_allocator();

}  // namespace greedyrank
