#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "greedyrank/data.hpp"
#include "greedyrank/trainer.hpp"

namespace greedyrank {

/// How a run obtains its data when no container file is supplied.
struct DataSpec {
  Provenance kind = Provenance::LowRank;
  Eigen::Index n = 64;
  Eigen::Index dim = 256;
  Eigen::Index rank = 8;
  double noise_std = 0.2;
  double scale = kDefaultManifoldScale;
  /// Unset: reuse the training seed.
  std::optional<std::uint64_t> seed;
};

Dataset generate(const DataSpec& spec, std::uint64_t fallback_seed);

struct ExperimentConfig {
  TrainConfig train;
  DataSpec data;
  bool two_stage = false;
};

/// Config-file problem: line is 1-based, 0 when not tied to a line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::size_t line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// `key = value` per line, `#` comments, blank lines allowed. Unknown keys,
/// repeated keys, and malformed values are errors.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies one assignment with the same rules as a config line.
void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value);

/// Every recognized key with its current value, in canonical order.
std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg);
std::string format_config(const ExperimentConfig& cfg);

/// Shortest decimal text that reads back to the same double (17 significant
/// digits).
std::string format_real(double v);

std::vector<std::string> metrics_header(int top_k);
void write_metrics_csv(std::ostream& out, const RunMetrics& metrics, int top_k);
void write_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics, int top_k);

class CsvError : public std::runtime_error {
 public:
  CsvError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what) {}
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

CsvTable parse_metrics_csv(std::string_view text, const std::string& name);
CsvTable read_metrics_csv(const std::filesystem::path& path);

/// Long-format merge: one `run_id,step,series,value` row per logged step and
/// series (every column except step and epoch). Throws CsvError when headers
/// differ between inputs.
void write_report(std::ostream& out, const std::vector<std::filesystem::path>& inputs);

inline constexpr int kSummarySchemaVersion = 1;

struct SummaryExtras {
  std::optional<std::size_t> detected_rank;
  std::optional<double> last_stable_alpha;
  double wall_clock_seconds = 0.0;
};

nlohmann::json make_summary(const ExperimentConfig& cfg, const RunMetrics& metrics, const SummaryExtras& extras);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace greedyrank
