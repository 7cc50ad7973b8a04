#include "greedyrank/data.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace greedyrank {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_le64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le64(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[at + static_cast<std::size_t>(i)];
  return v;
}

std::uint32_t get_le32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[at + static_cast<std::size_t>(i)];
  return v;
}

}  // namespace

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::LowRank:
      return "lowrank";
    case Provenance::Manifold:
      return "manifold";
    case Provenance::IdxFile:
      return "idx-file";
    case Provenance::Container:
      return "container";
  }
  return "?";
}

Dataset gen_lowrank(RandomSource& rng, Eigen::Index n, Eigen::Index dim, Eigen::Index rank, double noise_std) {
  if (n < 1 || dim < 1) throw std::invalid_argument("gen_lowrank: n and D must be >= 1");
  if (rank < 1 || rank > std::min(n, dim)) {
    throw std::invalid_argument("gen_lowrank: rank must satisfy 1 <= r <= min(n, D)");
  }
  if (!(noise_std >= 0.0)) throw std::invalid_argument("gen_lowrank: noise std must be >= 0");
  Dataset out;
  out.seed = rng.seed();
  const Matrix left = gaussian_matrix(rng, n, rank, 0.0, 1.0);
  const Matrix right = gaussian_matrix(rng, rank, dim, 0.0, 1.0);
  out.x = left * right + gaussian_matrix(rng, n, dim, 0.0, noise_std);
  out.ground_truth_rank = static_cast<std::size_t>(rank);
  out.noise_std = noise_std;
  out.provenance = Provenance::LowRank;
  return out;
}

Dataset gen_manifold(RandomSource& rng, Eigen::Index n, Eigen::Index dim, Eigen::Index rank, double scale) {
  if (n < 1 || dim < 1) throw std::invalid_argument("gen_manifold: n and D must be >= 1");
  if (rank < 1 || rank > dim) throw std::invalid_argument("gen_manifold: rank must satisfy 1 <= r <= D");
  const Eigen::Index hidden = 4 * rank;
  Dataset out;
  out.seed = rng.seed();
  const Matrix latent = gaussian_matrix(rng, n, rank, 0.0, 1.0);
  const Matrix lift = gaussian_matrix(rng, rank, hidden, 0.0, 1.0 / std::sqrt(static_cast<double>(rank)));
  const Matrix mix = gaussian_matrix(rng, hidden, dim, 0.0, 1.0 / std::sqrt(static_cast<double>(hidden)));
  out.x = (scale * (latent * lift)).array().tanh().matrix() * mix;
  out.ground_truth_rank = static_cast<std::size_t>(rank);
  out.provenance = Provenance::Manifold;
  return out;
}

ParseError::ParseError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw ParseError("idx: truncated magic word", bytes.size());
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxLabelMagic && magic != kIdxImageMagic) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", magic);
    throw ParseError(std::string("idx: unsupported magic ") + buf, 0);
  }
  const std::size_t n_dims = bytes[3];
  IdxArray out;
  std::size_t count = 1;
  for (std::size_t k = 0; k < n_dims; ++k) {
    const std::size_t at = 4 + 4 * k;
    if (bytes.size() < at + 4) throw ParseError("idx: truncated dimension header", bytes.size());
    const std::uint32_t dim = read_be32(bytes, at);
    if (dim != 0 && count > std::numeric_limits<std::size_t>::max() / dim) {
      throw ParseError("idx: dimension product overflows", at);
    }
    count *= dim;
    out.dims.push_back(dim);
  }
  const std::size_t header = 4 + 4 * n_dims;
  if (count == 0) throw ParseError("idx: zero-sized dimension", 4);
  if (bytes.size() - header < count) {
    throw ParseError("idx: payload truncated, expected " + std::to_string(count) + " bytes, found " +
                         std::to_string(bytes.size() - header),
                     bytes.size());
  }
  out.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header),
                    bytes.begin() + static_cast<std::ptrdiff_t>(header + count));
  return out;
}

std::vector<std::uint8_t> encode_idx(const IdxArray& array) {
  if (array.dims.size() != 1 && array.dims.size() != 3) {
    throw std::invalid_argument("encode_idx: expected 1 (labels) or 3 (images) dimensions");
  }
  std::vector<std::uint8_t> out{0, 0, 0x08, static_cast<std::uint8_t>(array.dims.size())};
  std::size_t count = 1;
  for (auto d : array.dims) {
    put_be32(out, d);
    count *= d;
  }
  if (count != array.values.size()) throw std::invalid_argument("encode_idx: value count does not match dimensions");
  out.insert(out.end(), array.values.begin(), array.values.end());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Dataset read_idx(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const IdxArray arr = parse_idx(bytes);
  Dataset out;
  out.provenance = Provenance::IdxFile;
  const auto n = static_cast<Eigen::Index>(arr.dims[0]);
  if (arr.dims.size() == 1) {
    out.x.resize(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) out.x(i, 0) = arr.values[static_cast<std::size_t>(i)];
    return out;
  }
  const auto pixels = static_cast<Eigen::Index>(arr.dims[1]) * static_cast<Eigen::Index>(arr.dims[2]);
  out.x.resize(n, pixels);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index p = 0; p < pixels; ++p) {
      out.x(i, p) = arr.values[static_cast<std::size_t>(i * pixels + p)] / 255.0;
    }
  }
  return out;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  const auto bytes = encode_idx(array);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> encode_dataset(const Dataset& data) {
  std::vector<std::uint8_t> out{'S', 'B', 'D', 'S'};
  out.reserve(kContainerHeaderBytes + 8 * static_cast<std::size_t>(data.x.size()));
  put_le32(out, kContainerVersion);
  put_le64(out, static_cast<std::uint64_t>(data.x.rows()));
  put_le64(out, static_cast<std::uint64_t>(data.x.cols()));
  put_le64(out, data.ground_truth_rank.value_or(0));
  put_le64(out, std::bit_cast<std::uint64_t>(data.noise_std));
  put_le64(out, data.seed);
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.x.cols(); ++j) put_le64(out, std::bit_cast<std::uint64_t>(data.x(i, j)));
  }
  return out;
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kContainerHeaderBytes) throw ParseError("dataset: truncated header", bytes.size());
  if (std::memcmp(bytes.data(), "SBDS", 4) != 0) throw ParseError("dataset: bad magic", 0);
  const std::uint32_t version = get_le32(bytes, 4);
  if (version != kContainerVersion) throw ParseError("dataset: unsupported version " + std::to_string(version), 4);
  const std::uint64_t n = get_le64(bytes, 8);
  const std::uint64_t dim = get_le64(bytes, 16);
  if (n == 0 || dim == 0) throw ParseError("dataset: empty shape", 8);
  if (n > (bytes.size() / 8) || dim > (bytes.size() / 8) / n) throw ParseError("dataset: shape exceeds file", 8);
  const std::size_t payload = 8 * n * dim;
  if (bytes.size() - kContainerHeaderBytes != payload) {
    throw ParseError("dataset: payload holds " + std::to_string(bytes.size() - kContainerHeaderBytes) +
                         " bytes, header promises " + std::to_string(payload),
                     kContainerHeaderBytes);
  }
  Dataset out;
  out.provenance = Provenance::Container;
  const std::uint64_t rank = get_le64(bytes, 24);
  if (rank > 0) out.ground_truth_rank = rank;
  out.noise_std = std::bit_cast<double>(get_le64(bytes, 32));
  out.seed = get_le64(bytes, 40);
  out.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  std::size_t at = kContainerHeaderBytes;
  for (Eigen::Index i = 0; i < out.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.x.cols(); ++j, at += 8) out.x(i, j) = std::bit_cast<double>(get_le64(bytes, at));
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  const auto bytes = encode_dataset(data);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file_bytes(path)); }

}  // namespace greedyrank
