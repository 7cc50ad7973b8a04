#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "greedyrank/linalg.hpp"

namespace greedyrank {

enum class Provenance { LowRank, Manifold, IdxFile, Container };

std::string_view to_string(Provenance p);

struct Dataset {
  Matrix x;  // n x D, one sample per row
  std::optional<std::size_t> ground_truth_rank;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  Provenance provenance = Provenance::LowRank;

  Eigen::Index samples() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }
};

/// X = X1 X2 + eps with X1 (n x r), X2 (r x D) standard Gaussian and eps
/// Gaussian with std s. Draw order: X1, X2, eps.
Dataset gen_lowrank(RandomSource& rng, Eigen::Index n, Eigen::Index dim, Eigen::Index rank, double noise_std);

/// X = tanh(scale * u A) B with u (n x r) standard Gaussian, A (r x 4r) with
/// std 1/sqrt(r), B (4r x D) with std 1/sqrt(4r). Intrinsic dimension r.
Dataset gen_manifold(RandomSource& rng, Eigen::Index n, Eigen::Index dim, Eigen::Index rank, double scale);

inline constexpr double kDefaultManifoldScale = 0.5;

/// Malformed IDX or dataset container input; carries the byte offset at
/// which parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset);
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> values;
};

/// Unsigned-byte IDX with one (labels) or three (images) dimensions.
IdxArray parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_idx(const IdxArray& array);

/// Images become n x (rows*cols) with values / 255; labels become n x 1 with
/// raw values.
Dataset read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// Binary dataset container: "SBDS", u32 version, u64 n, u64 D, u64
/// ground-truth rank (0 = unknown), f64 noise std, u64 seed, then n*D f64
/// values in row-major order. All fields little-endian.
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerHeaderBytes = 4 + 4 + 8 + 8 + 8 + 8 + 8;

std::vector<std::uint8_t> encode_dataset(const Dataset& data);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace greedyrank
