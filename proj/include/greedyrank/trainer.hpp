#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "greedyrank/autoencoder.hpp"
#include "greedyrank/data.hpp"
#include "greedyrank/optimizer.hpp"
#include "greedyrank/spectrum.hpp"

namespace greedyrank {

enum class BottleneckKind { Vanilla, Stack, Explicit };
enum class InitKind { He, Orthogonal };
enum class EncoderKind { Linear, Mlp };
enum class Stage2Init { Warm, Fresh };

std::string_view to_string(BottleneckKind k);
std::string_view to_string(InitKind k);
std::string_view to_string(EncoderKind k);
std::string_view to_string(Stage2Init k);

struct TrainConfig {
  // Model.
  BottleneckKind bottleneck = BottleneckKind::Stack;
  EncoderKind encoder = EncoderKind::Linear;
  Eigen::Index latent_dim = 128;
  std::vector<Eigen::Index> hidden{64, 64};
  Activation activation = Activation::Relu;
  double init_std = 0.1;  // linear encoder/decoder weights
  int depth = 16;
  InitKind init = InitKind::Orthogonal;
  double alpha = 1.0;
  double total_scale = 0.001;
  double he_slope = 2.23606797749978969641;  // sqrt(5), see HeInit
  Eigen::Index explicit_k = 8;

  // Optimization.
  OptimizerKind optimizer = OptimizerKind::Gd;
  double learning_rate = 0.03;
  /// Bottleneck rate multiplier; unset means 1/N of the active bottleneck.
  std::optional<double> bottleneck_scale;
  std::int64_t steps = 10000;  // full-batch budget
  std::int64_t epochs = 0;     // minibatch budget
  Eigen::Index batch = 0;      // 0 = full batch

  // Diagnostics and stopping.
  double rank_threshold = kDefaultRankThreshold;
  /// Steps (full batch) or epochs (minibatch); 0 = 20 steps or 1 epoch.
  std::int64_t log_every = 0;
  int top_k = 10;
  int patience = 5;
  std::int64_t epoch_steps = 1;        // full-batch steps per rank-check epoch
  std::int64_t stage1_max_epochs = 0;  // 0 = 10 * patience
  Stage2Init stage2_init = Stage2Init::Warm;
  double diverge_factor = 10.0;
  std::int64_t diverge_window = 100;
  std::uint64_t seed = 0;
  /// Rows used for latent-rank measurement in minibatch mode; 0 = the full
  /// training set up to 4096 rows.
  Eigen::Index eval_size = 0;

  bool full_batch() const { return batch == 0; }
  std::int64_t log_interval() const { return log_every > 0 ? log_every : (full_batch() ? 20 : 1); }
  /// Throws std::invalid_argument on inconsistent fields.
  void validate() const;
  double bottleneck_rate_multiplier(int bottleneck_depth) const;
};

struct MetricsRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double loss = 0.0;
  std::size_t we_rank = 0;
  std::size_t latent_rank = 0;
  double balance_residual = 0.0;
  std::vector<double> sv_we;  // top_k, zero padded
  std::vector<double> sv_z;
};

enum class RunStatus { Converged, Diverged, MaxSteps };

std::string_view to_string(RunStatus s);

struct RunMetrics {
  std::vector<MetricsRecord> records;
  RunStatus status = RunStatus::MaxSteps;
  std::int64_t steps_run = 0;
  std::optional<std::int64_t> last_finite_step;
  std::optional<double> last_finite_loss;

  const MetricsRecord* final_record() const { return records.empty() ? nullptr : &records.back(); }
};

/// True iff any loss is non-finite, or the loss stays above factor times the
/// first loss for `window` consecutive entries.
bool divergence_check(std::span<const double> losses, double factor = 10.0, std::int64_t window = 100);

/// True iff the last patience + 1 entries are all equal.
bool rank_plateau(std::span<const std::size_t> history, int patience);

/// Builds the model described by cfg for input dimension `input_dim`.
AeModel build_model(const TrainConfig& cfg, Eigen::Index input_dim, RandomSource& rng);
/// Also records the bottleneck multiplier in the stack's lr_group_scale.
OptimizerState build_optimizer(const TrainConfig& cfg, AeModel& model);

/// Called after every rank-check epoch with the 1-based epoch index; returning
/// true stops the run with status Converged.
using EpochHook = std::function<bool(std::int64_t epoch, const AeModel& model)>;

struct LoopResult {
  RunMetrics metrics;
  std::int64_t epochs_run = 0;
};

/// Runs the loop on an existing model. Budget is cfg.steps (full batch) or
/// cfg.epochs (minibatch) unless max_epochs is given.
LoopResult run_training(AeModel& model, OptimizerState& opt, const TrainConfig& cfg, const Dataset& data,
                        RandomSource& batch_rng, std::optional<std::int64_t> max_epochs = std::nullopt,
                        std::int64_t step_offset = 0, const EpochHook& hook = {});

RunMetrics train(const TrainConfig& cfg, const Dataset& data);

/// Like train, but also hands back the trained model.
RunMetrics train(const TrainConfig& cfg, const Dataset& data, AeModel& model_out);

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, RunMetrics metrics)
      : std::runtime_error(what), metrics_(std::move(metrics)) {}
  const RunMetrics& metrics() const noexcept { return metrics_; }

 private:
  RunMetrics metrics_;
};

struct StageResult {
  std::size_t detected_rank = 0;
  bool plateau_reached = false;
  std::vector<std::size_t> rank_history;  // W_e rank per epoch, epoch 0 first
  RunMetrics stage1;
  RunMetrics stage2;
  std::int64_t swap_step = 0;
};

/// Stage 1 trains the deep stack until its rank plateaus (or the epoch cap);
/// stage 2 swaps in a two-layer subnet with shared dimension equal to the
/// detected rank and trains for the regular budget. Throws DivergenceError if
/// stage 1 diverges.
StageResult two_stage(const TrainConfig& cfg, const Dataset& data);

using RunFunction = std::function<RunMetrics(const TrainConfig&, const Dataset&)>;
using DataProvider = std::function<Dataset(std::uint64_t seed)>;

struct SweepGrid {
  std::vector<int> depths;
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds;

  std::size_t size() const { return depths.size() * alphas.size() * seeds.size(); }
};

struct SweepRun {
  int depth = 0;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  std::optional<RunMetrics> metrics;
  std::string error;  // set when the run threw
};

/// Every (depth, alpha, seed) combination in depth-major order; runs are
/// independent and use up to `workers` threads.
std::vector<SweepRun> sweep(const SweepGrid& grid, const TrainConfig& base, const DataProvider& data,
                            int workers = 1, const RunFunction& runner = {});

struct EscalationLevel {
  double alpha = 0.0;
  RunStatus status = RunStatus::MaxSteps;
};

struct EscalationResult {
  std::vector<EscalationLevel> levels;
  std::optional<double> last_stable_alpha;
};

/// Raises alpha from alpha0 in fixed increments until a run diverges (or
/// max_levels runs), reporting the last alpha that did not diverge.
EscalationResult alpha_escalation(const TrainConfig& base, const Dataset& data, double alpha0,
                                  double increment = 100.0, int max_levels = 10, const RunFunction& runner = {});

/// First logged step at which the i-th top singular value of W_e exceeds half
/// of its final value, for i < k.
std::vector<std::int64_t> greedy_emergence_report(const RunMetrics& metrics, int k);

/// Pairs (i < j) with crossing[i] > crossing[j].
std::size_t count_inversions(std::span<const std::int64_t> crossings);

}  // namespace greedyrank
