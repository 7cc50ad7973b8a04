#include "greedyrank/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

namespace greedyrank {

namespace {

constexpr Eigen::Index kDefaultEvalCap = 4096;

class DivergenceMonitor {
 public:
  DivergenceMonitor(double factor, std::int64_t window) : factor_(factor), window_(window) {}

  /// Returns false once the run counts as diverged.
  bool observe(double loss) {
    if (!std::isfinite(loss)) return false;
    if (!initial_) initial_ = loss;
    run_ = loss > factor_ * *initial_ ? run_ + 1 : 0;
    return run_ < window_;
  }

 private:
  double factor_;
  std::int64_t window_;
  std::optional<double> initial_;
  std::int64_t run_ = 0;
};

std::vector<double> top_values(const std::vector<double>& sv, int k) {
  std::vector<double> out(static_cast<std::size_t>(k), 0.0);
  std::copy_n(sv.begin(), std::min(sv.size(), out.size()), out.begin());
  return out;
}

MetricsRecord make_record(const AeModel& model, const TrainConfig& cfg, std::int64_t step, std::int64_t epoch,
                          double loss, const Matrix& codes) {
  MetricsRecord rec;
  rec.step = step;
  rec.epoch = epoch;
  rec.loss = loss;
  if (model.has_stack() || model.has_explicit()) {
    const auto sv = singular_values(bottleneck_matrix(model));
    rec.we_rank = estimate_rank(sv, cfg.rank_threshold);
    rec.sv_we = top_values(sv, cfg.top_k);
  } else {
    rec.we_rank = static_cast<std::size_t>(model.latent_dim());
    rec.sv_we = top_values(std::vector<double>(static_cast<std::size_t>(model.latent_dim()), 1.0), cfg.top_k);
  }
  if (model.has_stack()) rec.balance_residual = balance_residual(model.stack());
  const auto sz = singular_values(codes);
  rec.latent_rank = estimate_rank(sz, cfg.rank_threshold);
  rec.sv_z = top_values(sz, cfg.top_k);
  return rec;
}

int bottleneck_depth(const AeModel& model) {
  if (model.has_stack()) return model.stack().depth();
  if (model.has_explicit()) return 2;
  return 1;
}

struct Streams {
  RandomSource init;
  RandomSource batch;
  RandomSource stage2;
};

Streams make_streams(std::uint64_t seed) {
  RandomSource root(seed);
  RandomSource init = root.split();
  RandomSource batch = root.split();
  RandomSource stage2 = root.split();
  return {init, batch, stage2};
}

Matrix eval_rows(const TrainConfig& cfg, const Matrix& x) {
  Eigen::Index rows = cfg.eval_size > 0 ? std::min(cfg.eval_size, x.rows()) : std::min(kDefaultEvalCap, x.rows());
  return x.topRows(rows);
}

LoopResult full_batch_loop(AeModel& model, OptimizerState& opt, const TrainConfig& cfg, const Matrix& x,
                           std::int64_t total_steps, std::int64_t step_offset, const EpochHook& hook) {
  LoopResult res;
  RunMetrics& m = res.metrics;
  if (total_steps == 0) return res;
  DivergenceMonitor monitor(cfg.diverge_factor, cfg.diverge_window);
  for (std::int64_t s = 0;; ++s) {
    const std::int64_t global = step_offset + s;
    const ForwardCache cache = forward(model, x);
    LossResult loss = mse_loss(x, cache.output);
    if (!monitor.observe(loss.loss)) {
      m.status = RunStatus::Diverged;
      break;
    }
    m.last_finite_step = global;
    m.last_finite_loss = loss.loss;

    bool final = s == total_steps;
    if (!final && s > 0 && s % cfg.epoch_steps == 0) {
      ++res.epochs_run;
      if (hook && hook(res.epochs_run, model)) {
        m.status = RunStatus::Converged;
        final = true;
      }
    }
    if (s % cfg.log_interval() == 0 || final) {
      m.records.push_back(make_record(model, cfg, global, global / cfg.epoch_steps, loss.loss, cache.latent()));
    }
    if (final) break;

    const Gradients grads = backward(model, cache, loss.grad);
    if (apply_step(model, grads, opt).diverged) {
      m.status = RunStatus::Diverged;
      break;
    }
    m.steps_run = s + 1;
  }
  if (m.status != RunStatus::Diverged && res.epochs_run * cfg.epoch_steps < m.steps_run) {
    res.epochs_run = m.steps_run / cfg.epoch_steps;
  }
  return res;
}

std::vector<Eigen::Index> shuffled(Eigen::Index n, RandomSource& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

LoopResult minibatch_loop(AeModel& model, OptimizerState& opt, const TrainConfig& cfg, const Matrix& x,
                          RandomSource& batch_rng, std::int64_t total_epochs, std::int64_t step_offset,
                          const EpochHook& hook) {
  LoopResult res;
  RunMetrics& m = res.metrics;
  if (total_epochs == 0) return res;
  const Matrix eval = eval_rows(cfg, x);
  const Eigen::Index n = x.rows();
  const Eigen::Index b = std::min(cfg.batch, n);
  DivergenceMonitor monitor(cfg.diverge_factor, cfg.diverge_window);
  std::int64_t steps = 0;
  for (std::int64_t e = 0;; ++e) {
    bool final = e == total_epochs;
    if (!final && e > 0 && hook && hook(e, model)) {
      m.status = RunStatus::Converged;
      final = true;
    }
    if (e % cfg.log_interval() == 0 || final) {
      const ForwardCache cache = forward(model, eval);
      const double eval_loss = mse_loss(eval, cache.output).loss;
      m.records.push_back(make_record(model, cfg, step_offset + steps, e, eval_loss, cache.latent()));
    }
    if (final) break;

    const auto order = shuffled(n, batch_rng);
    for (Eigen::Index start = 0; start < n; start += b) {
      const Eigen::Index rows = std::min(b, n - start);
      Matrix xb(rows, x.cols());
      for (Eigen::Index i = 0; i < rows; ++i) xb.row(i) = x.row(order[static_cast<std::size_t>(start + i)]);
      const ForwardCache cache = forward(model, xb);
      LossResult loss = mse_loss(xb, cache.output);
      if (!monitor.observe(loss.loss)) {
        m.status = RunStatus::Diverged;
        break;
      }
      m.last_finite_step = step_offset + steps;
      m.last_finite_loss = loss.loss;
      const Gradients grads = backward(model, cache, loss.grad);
      if (apply_step(model, grads, opt).diverged) {
        m.status = RunStatus::Diverged;
        break;
      }
      ++steps;
    }
    m.steps_run = steps;
    if (m.status == RunStatus::Diverged) break;
    res.epochs_run = e + 1;
  }
  return res;
}

}  // namespace

std::string_view to_string(BottleneckKind k) {
  switch (k) {
    case BottleneckKind::Vanilla:
      return "vanilla";
    case BottleneckKind::Stack:
      return "stack";
    case BottleneckKind::Explicit:
      return "explicit";
  }
  return "?";
}

std::string_view to_string(InitKind k) { return k == InitKind::He ? "he" : "orthogonal"; }
std::string_view to_string(EncoderKind k) { return k == EncoderKind::Linear ? "linear" : "mlp"; }
std::string_view to_string(Stage2Init k) { return k == Stage2Init::Warm ? "warm" : "fresh"; }

std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Converged:
      return "converged";
    case RunStatus::Diverged:
      return "diverged";
    case RunStatus::MaxSteps:
      return "max-steps";
  }
  return "?";
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + what);
  };
  require(latent_dim >= 1, "model.d must be >= 1");
  require(depth >= 1, "stack.N must be >= 1");
  require(alpha >= 1.0, "stack.alpha must be >= 1");
  require(total_scale > 0.0, "stack.total_scale must be > 0");
  require(he_slope >= 0.0, "stack.he_slope must be >= 0");
  require(init_std >= 0.0, "model.init_std must be >= 0");
  require(bottleneck != BottleneckKind::Explicit || (explicit_k >= 1 && explicit_k <= latent_dim),
          "explicit.k must lie in [1, model.d]");
  require(learning_rate > 0.0, "opt.lr must be > 0");
  require(!bottleneck_scale || *bottleneck_scale > 0.0, "opt.bottleneck_scale must be > 0");
  require(steps >= 0, "train.steps must be >= 0");
  require(epochs >= 0, "train.epochs must be >= 0");
  require(batch >= 0, "train.batch must be >= 0");
  require(log_every >= 0, "log.every must be >= 0");
  require(top_k >= 1, "log.topk must be >= 1");
  require(patience >= 1, "plateau.patience must be >= 1");
  require(epoch_steps >= 1, "plateau.epoch_steps must be >= 1");
  require(stage1_max_epochs >= 0, "stage1.max_epochs must be >= 0");
  require(diverge_factor > 0.0, "diverge.factor must be > 0");
  require(diverge_window >= 1, "diverge.window must be >= 1");
  require(eval_size >= 0, "eval.size must be >= 0");
  for (auto h : hidden) require(h >= 1, "model.hidden widths must be >= 1");
}

double TrainConfig::bottleneck_rate_multiplier(int bottleneck_depth) const {
  return bottleneck_scale ? *bottleneck_scale : 1.0 / bottleneck_depth;
}

bool divergence_check(std::span<const double> losses, double factor, std::int64_t window) {
  DivergenceMonitor monitor(factor, window);
  return std::any_of(losses.begin(), losses.end(), [&](double l) { return !monitor.observe(l); });
}

bool rank_plateau(std::span<const std::size_t> history, int patience) {
  const auto need = static_cast<std::size_t>(patience) + 1;
  if (history.size() < need) return false;
  const auto tail = history.last(need);
  return std::all_of(tail.begin(), tail.end(), [&](std::size_t r) { return r == tail.front(); });
}

AeModel build_model(const TrainConfig& cfg, Eigen::Index input_dim, RandomSource& rng) {
  cfg.validate();
  RandomSource net_rng = rng.split();
  RandomSource bottleneck_rng = rng.split();

  Bottleneck bottleneck;
  switch (cfg.bottleneck) {
    case BottleneckKind::Vanilla:
      break;
    case BottleneckKind::Stack: {
      StackInit init = cfg.init == InitKind::He ? StackInit{HeInit{cfg.he_slope}}
                                                : StackInit{OrthogonalInit{cfg.total_scale, cfg.alpha}};
      bottleneck = init_stack(bottleneck_rng, cfg.latent_dim, cfg.depth, init);
      break;
    }
    case BottleneckKind::Explicit:
      bottleneck = make_explicit(bottleneck_rng, cfg.latent_dim, cfg.explicit_k);
      break;
  }

  if (cfg.encoder == EncoderKind::Linear) {
    return make_linear_ae(net_rng, input_dim, cfg.latent_dim, cfg.init_std, std::move(bottleneck));
  }
  return make_mlp_ae(net_rng, input_dim, cfg.hidden, cfg.latent_dim, cfg.activation, std::move(bottleneck));
}

OptimizerState build_optimizer(const TrainConfig& cfg, AeModel& model) {
  OptimizerState opt;
  opt.kind = cfg.optimizer;
  opt.learning_rate = cfg.learning_rate;
  opt.bottleneck_scale = cfg.bottleneck_rate_multiplier(bottleneck_depth(model));
  if (model.has_stack()) model.stack().lr_group_scale = opt.bottleneck_scale;
  return opt;
}

LoopResult run_training(AeModel& model, OptimizerState& opt, const TrainConfig& cfg, const Dataset& data,
                        RandomSource& batch_rng, std::optional<std::int64_t> max_epochs, std::int64_t step_offset,
                        const EpochHook& hook) {
  cfg.validate();
  if (data.dim() != model.input_dim()) {
    throw std::invalid_argument("train: data dimension " + std::to_string(data.dim()) +
                                " does not match model input " + std::to_string(model.input_dim()));
  }
  if (cfg.full_batch()) {
    const std::int64_t total = max_epochs ? *max_epochs * cfg.epoch_steps : cfg.steps;
    return full_batch_loop(model, opt, cfg, data.x, total, step_offset, hook);
  }
  return minibatch_loop(model, opt, cfg, data.x, batch_rng, max_epochs.value_or(cfg.epochs), step_offset, hook);
}

RunMetrics train(const TrainConfig& cfg, const Dataset& data, AeModel& model_out) {
  Streams streams = make_streams(cfg.seed);
  model_out = build_model(cfg, data.dim(), streams.init);
  OptimizerState opt = build_optimizer(cfg, model_out);
  return run_training(model_out, opt, cfg, data, streams.batch).metrics;
}

RunMetrics train(const TrainConfig& cfg, const Dataset& data) {
  AeModel model;
  return train(cfg, data, model);
}

StageResult two_stage(const TrainConfig& cfg, const Dataset& data) {
  if (cfg.bottleneck != BottleneckKind::Stack) throw std::invalid_argument("two_stage: stage 1 needs a stack bottleneck");
  Streams streams = make_streams(cfg.seed);
  AeModel model = build_model(cfg, data.dim(), streams.init);
  OptimizerState opt = build_optimizer(cfg, model);

  StageResult result;
  auto we_rank = [&](const AeModel& m) { return estimate_rank(singular_values(bottleneck_matrix(m)), cfg.rank_threshold); };
  result.rank_history.push_back(we_rank(model));
  const EpochHook hook = [&](std::int64_t, const AeModel& m) {
    result.rank_history.push_back(we_rank(m));
    return rank_plateau(result.rank_history, cfg.patience);
  };
  const std::int64_t cap = cfg.stage1_max_epochs > 0 ? cfg.stage1_max_epochs : 10 * std::int64_t{cfg.patience};
  LoopResult stage1 = run_training(model, opt, cfg, data, streams.batch, cap, 0, hook);
  if (stage1.metrics.status == RunStatus::Diverged) {
    throw DivergenceError("two_stage: stage 1 diverged after " + std::to_string(stage1.metrics.steps_run) + " steps",
                          std::move(stage1.metrics));
  }
  result.plateau_reached = stage1.metrics.status == RunStatus::Converged;
  result.detected_rank = std::max<std::size_t>(1, we_rank(model));
  result.swap_step = stage1.metrics.steps_run;
  result.stage1 = std::move(stage1.metrics);

  const auto k = static_cast<Eigen::Index>(result.detected_rank);
  if (cfg.stage2_init == Stage2Init::Warm) {
    model.bottleneck = warm_start_from(effective_matrix(model.stack()), k);
  } else {
    model.bottleneck = make_explicit(streams.stage2, cfg.latent_dim, k);
  }
  ++model.version;
  OptimizerState opt2 = build_optimizer(cfg, model);
  result.stage2 = run_training(model, opt2, cfg, data, streams.batch, std::nullopt, result.swap_step).metrics;
  return result;
}

std::vector<SweepRun> sweep(const SweepGrid& grid, const TrainConfig& base, const DataProvider& data, int workers,
                            const RunFunction& runner) {
  if (grid.size() == 0) throw std::invalid_argument("sweep: empty grid");
  std::vector<SweepRun> runs;
  for (int depth : grid.depths) {
    for (double alpha : grid.alphas) {
      for (std::uint64_t seed : grid.seeds) runs.push_back({depth, alpha, seed, std::nullopt, {}});
    }
  }
  const RunFunction run = runner ? runner : RunFunction([](const TrainConfig& c, const Dataset& d) { return train(c, d); });
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      SweepRun& r = runs[i];
      TrainConfig cfg = base;
      cfg.depth = r.depth;
      cfg.alpha = r.alpha;
      cfg.seed = r.seed;
      try {
        r.metrics = run(cfg, data(r.seed));
      } catch (const std::exception& e) {
        r.error = e.what();
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::clamp(workers, 1, static_cast<int>(runs.size())));
  if (n_threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work);
  }
  return runs;
}

EscalationResult alpha_escalation(const TrainConfig& base, const Dataset& data, double alpha0, double increment,
                                  int max_levels, const RunFunction& runner) {
  if (max_levels < 1) throw std::invalid_argument("alpha_escalation: max_levels must be >= 1");
  const RunFunction run = runner ? runner : RunFunction([](const TrainConfig& c, const Dataset& d) { return train(c, d); });
  EscalationResult out;
  for (int level = 0; level < max_levels; ++level) {
    TrainConfig cfg = base;
    cfg.alpha = alpha0 + increment * level;
    const RunMetrics m = run(cfg, data);
    out.levels.push_back({cfg.alpha, m.status});
    if (m.status == RunStatus::Diverged) break;
    out.last_stable_alpha = cfg.alpha;
  }
  return out;
}

std::vector<std::int64_t> greedy_emergence_report(const RunMetrics& metrics, int k) {
  if (k < 1) throw std::invalid_argument("greedy_emergence_report: k must be >= 1");
  if (metrics.records.empty()) throw std::invalid_argument("greedy_emergence_report: no spectra logged");
  const auto& last = metrics.records.back();
  if (last.sv_we.size() < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("greedy_emergence_report: fewer than k singular values logged");
  }
  std::vector<std::int64_t> crossings;
  for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) {
    const double half = 0.5 * last.sv_we[i];
    std::int64_t when = last.step;
    for (const auto& rec : metrics.records) {
      if (rec.sv_we[i] > half) {
        when = rec.step;
        break;
      }
    }
    crossings.push_back(when);
  }
  return crossings;
}

std::size_t count_inversions(std::span<const std::int64_t> crossings) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < crossings.size(); ++i) {
    for (std::size_t j = i + 1; j < crossings.size(); ++j) n += crossings[i] > crossings[j] ? 1 : 0;
  }
  return n;
}

}  // namespace greedyrank
