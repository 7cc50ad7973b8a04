#include "greedyrank/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace greedyrank {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Orthogonalizes the columns of g in place by pairwise plane rotations,
// accumulating the rotations into v when it is non-null. g must have at
// least as many rows as columns.
void jacobi_orthogonalize(Matrix& g, Matrix* v) {
  const Eigen::Index n = g.cols();
  const double tol = std::sqrt(static_cast<double>(g.rows())) *
                     std::numeric_limits<double>::epsilon();
  Eigen::VectorXd norms(n);
  for (int sweep = 0; sweep < kSvdSweepCap; ++sweep) {
    for (Eigen::Index j = 0; j < n; ++j) norms[j] = g.col(j).squaredNorm();
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double a = norms[p];
        const double b = norms[q];
        if (a == 0.0 || b == 0.0) continue;
        const double gamma = g.col(p).dot(g.col(q));
        if (std::abs(gamma) <= tol * std::sqrt(a) * std::sqrt(b)) continue;
        rotated = true;
        const double zeta = (b - a) / (2.0 * gamma);
        const double t =
            std::abs(zeta) > 1e150
                ? 0.5 / zeta
                : std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          const double gp = g(i, p);
          const double gq = g(i, q);
          g(i, p) = c * gp - s * gq;
          g(i, q) = s * gp + c * gq;
        }
        if (v != nullptr) {
          for (Eigen::Index i = 0; i < v->rows(); ++i) {
            const double vp = (*v)(i, p);
            const double vq = (*v)(i, q);
            (*v)(i, p) = c * vp - s * vq;
            (*v)(i, q) = s * vp + c * vq;
          }
        }
        norms[p] = a - t * gamma;
        norms[q] = b + t * gamma;
      }
    }
    if (!rotated) return;
  }
  throw NumericError("svd: Jacobi sweeps did not converge within " +
                     std::to_string(kSvdSweepCap) + " sweeps");
}

std::vector<Eigen::Index> descending_order(const std::vector<double>& values) {
  std::vector<Eigen::Index> order(values.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return values[x] > values[y]; });
  return order;
}

// Replaces zero columns of u (flagged in `missing`) with unit vectors
// orthogonal to every other column.
void complete_orthonormal(Matrix& u, const std::vector<bool>& missing) {
  const Eigen::Index m = u.rows();
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    if (!missing[j]) continue;
    Eigen::VectorXd best;
    double best_norm = -1.0;
    for (Eigen::Index e = 0; e < m; ++e) {
      Eigen::VectorXd cand = Eigen::VectorXd::Unit(m, e);
      for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index k = 0; k < u.cols(); ++k) {
          if (k == j) continue;
          cand -= u.col(k).dot(cand) * u.col(k);
        }
      }
      const double nrm = cand.norm();
      if (nrm > best_norm) {
        best_norm = nrm;
        best = cand;
      }
      if (best_norm > 0.5) break;
    }
    u.col(j) = best / best_norm;
  }
}

SvdResult svd_tall(const Matrix& a) {
  const Eigen::Index n = a.cols();
  Matrix g = a;
  Matrix v = Matrix::Identity(n, n);
  jacobi_orthogonalize(g, &v);

  std::vector<double> sigma(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) sigma[j] = g.col(j).norm();
  const auto order = descending_order(sigma);

  SvdResult out;
  out.U.resize(a.rows(), n);
  out.V.resize(n, n);
  out.singular_values.resize(static_cast<std::size_t>(n));
  std::vector<bool> missing(static_cast<std::size_t>(n), false);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index j = order[k];
    const double s = sigma[j];
    out.singular_values[k] = s;
    out.V.col(k) = v.col(j);
    if (s > std::numeric_limits<double>::min()) {
      out.U.col(k) = g.col(j) / s;
    } else {
      out.singular_values[k] = 0.0;
      out.U.col(k).setZero();
      missing[k] = true;
    }
  }
  if (std::find(missing.begin(), missing.end(), true) != missing.end()) {
    complete_orthonormal(out.U, missing);
  }
  return out;
}

}  // namespace

RandomSource::RandomSource(std::uint64_t seed) : seed_(seed), engine_(seed) {}

std::uint64_t RandomSource::next_u64() { return engine_(); }

double RandomSource::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RandomSource::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RandomSource RandomSource::split() { return RandomSource(splitmix64(next_u64())); }

Matrix gaussian_matrix(RandomSource& rng, Eigen::Index rows, Eigen::Index cols,
                       double mean, double stddev) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("gaussian_matrix: empty shape");
  if (!(stddev >= 0.0)) throw std::invalid_argument("gaussian_matrix: std must be >= 0");
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = rng.normal(mean, stddev);
  }
  return out;
}

Matrix haar_orthogonal(RandomSource& rng, Eigen::Index n) {
  if (n < 1) throw std::invalid_argument("haar_orthogonal: n must be >= 1");
  const Matrix a = gaussian_matrix(rng, n, n, 0.0, 1.0);
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ();
  const Matrix& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

SvdResult svd(const Matrix& a) {
  if (a.size() == 0) throw std::invalid_argument("svd: empty matrix");
  if (!all_finite(a)) throw std::invalid_argument("svd: non-finite input");
  if (a.rows() >= a.cols()) return svd_tall(a);
  SvdResult t = svd_tall(a.transpose());
  std::swap(t.U, t.V);
  return t;
}

std::vector<double> singular_values(const Matrix& a) {
  if (a.size() == 0) throw std::invalid_argument("singular_values: empty matrix");
  if (!all_finite(a)) throw std::invalid_argument("singular_values: non-finite input");
  Matrix g = a.rows() >= a.cols() ? Matrix(a) : Matrix(a.transpose());
  jacobi_orthogonalize(g, nullptr);
  std::vector<double> sigma(static_cast<std::size_t>(g.cols()));
  for (Eigen::Index j = 0; j < g.cols(); ++j) sigma[j] = g.col(j).norm();
  std::sort(sigma.begin(), sigma.end(), std::greater<>());
  return sigma;
}

std::vector<double> vec_cf(const Matrix& a) {
  // Eigen's default storage is already column-major.
  return std::vector<double>(a.data(), a.data() + a.size());
}

Matrix unvec_cf(std::span<const double> v, Eigen::Index rows, Eigen::Index cols) {
  if (rows < 1 || cols < 1 || static_cast<Eigen::Index>(v.size()) != rows * cols) {
    throw std::invalid_argument("unvec_cf: length " + std::to_string(v.size()) +
                                " does not match " + std::to_string(rows) + "x" +
                                std::to_string(cols));
  }
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) +
                                " and " + std::to_string(b.rows()) + " disagree");
  }
  Matrix out(a.rows(), b.cols());
  out.noalias() = a * b;
  return out;
}

Matrix transpose(const Matrix& a) { return a.transpose(); }

double frobenius_norm(const Matrix& a) { return a.norm(); }

Matrix scaled(const Matrix& a, double factor) { return factor * a; }

bool all_finite(const Matrix& a) { return a.allFinite(); }

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace greedyrank
