#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "greedyrank/dynamics.hpp"
#include "greedyrank/io.hpp"

namespace fs = std::filesystem;
using namespace greedyrank;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

struct Outcome {
  RunMetrics metrics;
  std::optional<std::size_t> detected_rank;
};

// Stage 1 and stage 2 records go into one metrics table; stage 2 steps
// continue the stage 1 count.
Outcome run_experiment(const ExperimentConfig& cfg, const Dataset& data) {
  if (!cfg.two_stage) return {train(cfg.train, data), std::nullopt};
  try {
    StageResult st = two_stage(cfg.train, data);
    Outcome out;
    out.detected_rank = st.detected_rank;
    out.metrics = std::move(st.stage2);
    auto& recs = out.metrics.records;
    recs.insert(recs.begin(), st.stage1.records.begin(), st.stage1.records.end());
    out.metrics.steps_run += st.stage1.steps_run;
    return out;
  } catch (const DivergenceError& e) {
    return {e.metrics(), std::nullopt};
  }
}

void write_outputs(const fs::path& dir, const ExperimentConfig& cfg, const Outcome& out, double seconds,
                   std::optional<double> last_stable_alpha = std::nullopt) {
  fs::create_directories(dir);
  write_metrics_csv(dir / "metrics.csv", out.metrics, cfg.train.top_k);
  SummaryExtras extras;
  extras.detected_rank = out.detected_rank;
  extras.last_stable_alpha = last_stable_alpha;
  extras.wall_clock_seconds = seconds;
  write_json(dir / "summary.json", make_summary(cfg, out.metrics, extras));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Dataset load_or_generate(const std::string& data_path, const ExperimentConfig& cfg) {
  if (!data_path.empty()) return read_dataset(data_path);
  return generate(cfg.data, cfg.train.seed);
}

ExperimentConfig load_with_overrides(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'", 0);
    try {
      apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--set: ") + e.what(), 0);
    }
  }
  try {
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), 0);
  }
  return cfg;
}

std::string alpha_text(double a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", a);
  return buf;
}

std::string run_dir_name(int depth, double alpha, std::uint64_t seed) {
  return "N" + std::to_string(depth) + "_a" + alpha_text(alpha) + "_s" + std::to_string(seed);
}

// --- gen-data ---------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  Eigen::Index n = 64;
  Eigen::Index dim = 256;
  Eigen::Index rank = 8;
  double noise = 0.2;
  std::uint64_t seed = 0;
  bool manifold = false;
  double scale = kDefaultManifoldScale;
};

int cmd_gen_data(const GenDataArgs& a) {
  if (a.n < 1 || a.dim < 1) {
    std::cerr << "gen-data: n and D must be >= 1\n";
    return kExitUsage;
  }
  if (a.rank < 1 || a.rank > std::min(a.n, a.dim)) {
    std::cerr << "gen-data: rank r=" << a.rank << " must satisfy 1 <= r <= min(n, D) = " << std::min(a.n, a.dim) << "\n";
    return kExitUsage;
  }
  if (a.noise < 0.0) {
    std::cerr << "gen-data: noise std s must be >= 0\n";
    return kExitUsage;
  }
  DataSpec spec;
  spec.kind = a.manifold ? Provenance::Manifold : Provenance::LowRank;
  spec.n = a.n;
  spec.dim = a.dim;
  spec.rank = a.rank;
  spec.noise_std = a.noise;
  spec.scale = a.scale;
  spec.seed = a.seed;
  const Dataset data = generate(spec, a.seed);
  write_dataset(a.out, data);
  std::cout << "wrote " << a.out << " (" << data.samples() << " x " << data.dim() << ")\n";
  return kExitOk;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& a) {
  const ExperimentConfig cfg = load_with_overrides(a.config, a.overrides);
  const Dataset data = load_or_generate(a.data, cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const Outcome out = run_experiment(cfg, data);
  write_outputs(a.out, cfg, out, seconds_since(t0));

  const auto* last = out.metrics.final_record();
  std::cout << "status " << to_string(out.metrics.status) << ", steps " << out.metrics.steps_run;
  if (last != nullptr) std::cout << ", loss " << format_real(last->loss) << ", latent rank " << last->latent_rank;
  if (out.detected_rank) std::cout << ", detected rank " << *out.detected_rank;
  std::cout << "\n";
  return out.metrics.status == RunStatus::Diverged ? kExitDiverged : kExitOk;
}

// --- dynamics-verify --------------------------------------------------------

struct VerifyArgs {
  Eigen::Index d = 3;
  int depth = 2;
  double eta = 1e-3;
  int trials = 20;
  std::uint64_t seed = 0;
  Eigen::Index cap = kOracleWidthCap;
  double lo = 3.0;
  double hi = 5.0;
  std::string json;
};

int cmd_dynamics_verify(const VerifyArgs& a) {
  if (a.d < 1 || a.d > a.cap) {
    std::cerr << "dynamics-verify: d=" << a.d << " outside [1, " << a.cap << "] (oracle cap)\n";
    return kExitUsage;
  }
  if (a.depth < 1 || a.trials < 1 || !(a.eta > 0.0)) {
    std::cerr << "dynamics-verify: need N >= 1, trials >= 1, eta > 0\n";
    return kExitUsage;
  }
  RandomSource rng(a.seed);
  nlohmann::json trials = nlohmann::json::array();
  bool all_pass = true;
  for (int t = 0; t < a.trials; ++t) {
    const OrderCheck c = random_order_trial(rng, a.d, a.depth, a.eta);
    const bool pass = c.passed(a.lo, a.hi);
    all_pass = all_pass && pass;
    std::cout << "trial " << t << ": ";
    if (c.exact_within_fp) {
      std::cout << "exact within fp";
    } else {
      std::cout << "ratio " << format_real(*c.ratio);
    }
    std::cout << " (e=" << format_real(c.error_full) << ", e_half=" << format_real(c.error_half) << ") "
              << (pass ? "pass" : "FAIL") << "\n";
    nlohmann::json j{{"trial", t}, {"error_full", c.error_full}, {"error_half", c.error_half},
                     {"exact_within_fp", c.exact_within_fp}, {"balanced", c.balanced}, {"pass", pass}};
    j["ratio"] = c.ratio ? nlohmann::json(*c.ratio) : nlohmann::json(nullptr);
    trials.push_back(std::move(j));
  }
  std::cout << (all_pass ? "all trials pass" : "some trials FAIL") << "\n";
  if (!a.json.empty()) {
    nlohmann::json report{{"schema_version", kSummarySchemaVersion}, {"d", a.d}, {"N", a.depth}, {"eta", a.eta},
                          {"seed", a.seed}, {"generator", RandomSource::kGeneratorName}, {"band", {a.lo, a.hi}},
                          {"all_pass", all_pass}, {"trials", std::move(trials)}};
    write_json(a.json, report);
  }
  return all_pass ? kExitOk : kExitCheckFailed;
}

// --- sweep ------------------------------------------------------------------

struct SweepArgs {
  std::string config;
  std::string data;
  std::string out;
  std::vector<std::string> overrides;
  std::vector<int> depths;
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds;
  int workers = 1;
  bool escalate = false;
  double increment = 100.0;
  int max_levels = 10;
};

int cmd_sweep(const SweepArgs& a) {
  const ExperimentConfig base = load_with_overrides(a.config, a.overrides);
  const std::vector<int> depths = a.depths.empty() ? std::vector<int>{base.train.depth} : a.depths;
  const std::vector<double> alphas = a.alphas.empty() ? std::vector<double>{base.train.alpha} : a.alphas;
  const std::vector<std::uint64_t> seeds = a.seeds.empty() ? std::vector<std::uint64_t>{base.train.seed} : a.seeds;
  fs::create_directories(a.out);

  std::optional<Dataset> shared;
  if (!a.data.empty()) shared = read_dataset(a.data);
  auto data_for = [&](std::uint64_t seed) {
    ExperimentConfig c = base;
    c.train.seed = seed;
    return shared ? *shared : load_or_generate("", c);
  };

  auto as_experiment = [&](const TrainConfig& t) {
    ExperimentConfig c = base;
    c.train = t;
    return c;
  };

  nlohmann::json summary;
  summary["schema_version"] = kSummarySchemaVersion;
  summary["generator"] = RandomSource::kGeneratorName;
  std::size_t succeeded = 0;
  std::size_t total = 0;

  if (!a.escalate) {
    std::mutex detected_mu;
    std::map<std::string, std::size_t> detected;
    const RunFunction runner = [&](const TrainConfig& t, const Dataset& d) {
      const ExperimentConfig c = as_experiment(t);
      const auto t0 = std::chrono::steady_clock::now();
      const Outcome out = run_experiment(c, d);
      const std::string name = run_dir_name(t.depth, t.alpha, t.seed);
      write_outputs(fs::path(a.out) / name, c, out, seconds_since(t0));
      if (out.detected_rank) {
        std::lock_guard lock(detected_mu);
        detected[name] = *out.detected_rank;
      }
      return out.metrics;
    };
    const SweepGrid grid{depths, alphas, seeds};
    const auto runs = sweep(grid, base.train, data_for, a.workers, runner);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : runs) {
      ++total;
      const std::string name = run_dir_name(r.depth, r.alpha, r.seed);
      nlohmann::json j{{"dir", name}, {"N", r.depth}, {"alpha", r.alpha}, {"seed", r.seed}};
      if (!r.metrics) {
        j["status"] = "error";
        j["error"] = r.error;
      } else {
        j["status"] = std::string(to_string(r.metrics->status));
        const auto* last = r.metrics->final_record();
        j["final_latent_rank"] = last ? nlohmann::json(last->latent_rank) : nlohmann::json(nullptr);
        j["final_we_rank"] = last ? nlohmann::json(last->we_rank) : nlohmann::json(nullptr);
        j["final_loss"] = last ? nlohmann::json(last->loss) : nlohmann::json(nullptr);
        if (auto it = detected.find(name); it != detected.end()) j["detected_rank"] = it->second;
        if (r.metrics->status != RunStatus::Diverged) ++succeeded;
      }
      rows.push_back(std::move(j));
    }
    summary["mode"] = "grid";
    summary["runs"] = std::move(rows);
  } else {
    if (alphas.size() != 1) {
      std::cerr << "sweep: escalation takes exactly one starting alpha\n";
      return kExitUsage;
    }
    nlohmann::json groups = nlohmann::json::array();
    for (int depth : depths) {
      for (std::uint64_t seed : seeds) {
        TrainConfig t = base.train;
        t.depth = depth;
        t.seed = seed;
        const Dataset d = data_for(seed);
        const RunFunction runner = [&](const TrainConfig& tc, const Dataset& dd) {
          const ExperimentConfig c = as_experiment(tc);
          const auto t0 = std::chrono::steady_clock::now();
          const Outcome out = run_experiment(c, dd);
          write_outputs(fs::path(a.out) / run_dir_name(tc.depth, tc.alpha, tc.seed), c, out, seconds_since(t0));
          return out.metrics;
        };
        const EscalationResult esc = alpha_escalation(t, d, alphas.front(), a.increment, a.max_levels, runner);
        nlohmann::json levels = nlohmann::json::array();
        for (const auto& lv : esc.levels) {
          ++total;
          if (lv.status != RunStatus::Diverged) ++succeeded;
          levels.push_back({{"alpha", lv.alpha},
                            {"dir", run_dir_name(depth, lv.alpha, seed)},
                            {"status", std::string(to_string(lv.status))}});
        }
        nlohmann::json g{{"N", depth}, {"seed", seed}, {"levels", std::move(levels)}};
        g["last_stable_alpha"] = esc.last_stable_alpha ? nlohmann::json(*esc.last_stable_alpha) : nlohmann::json(nullptr);
        groups.push_back(std::move(g));
      }
    }
    summary["mode"] = "alpha-escalation";
    summary["alpha0"] = alphas.front();
    summary["increment"] = a.increment;
    summary["groups"] = groups;
    if (groups.size() == 1) summary["last_stable_alpha"] = groups[0]["last_stable_alpha"];
  }
  summary["succeeded"] = succeeded;
  summary["total"] = total;
  write_json(fs::path(a.out) / "sweep_summary.json", summary);
  std::cout << succeeded << " of " << total << " runs succeeded\n";
  return succeeded > 0 ? kExitOk : kExitDiverged;
}

// --- report -----------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

int cmd_report(const ReportArgs& a) {
  std::vector<fs::path> paths(a.inputs.begin(), a.inputs.end());
  std::ostringstream buf;
  write_report(buf, paths);
  if (a.out.empty()) {
    std::cout << buf.str();
  } else {
    std::ofstream f(a.out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + a.out);
    f << buf.str();
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"greedyrank: deep linear bottleneck autoencoder experiments"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset container");
  gen_cmd->add_option("-o,--out", gen.out, "Output file")->required();
  gen_cmd->add_option("-n,--samples", gen.n, "Samples")->capture_default_str();
  gen_cmd->add_option("-D,--dim", gen.dim, "Data dimension")->capture_default_str();
  gen_cmd->add_option("-r,--rank", gen.rank, "Ground-truth rank / intrinsic dimension")->capture_default_str();
  gen_cmd->add_option("-s,--noise", gen.noise, "Noise std (low-rank data)")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Seed")->capture_default_str();
  gen_cmd->add_flag("--manifold", gen.manifold, "Nonlinear manifold data instead of low-rank");
  gen_cmd->add_option("--scale", gen.scale, "Manifold nonlinearity scale")->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train one model and write metrics.csv + summary.json");
  train_cmd->add_option("-c,--config", tr.config, "Config file")->required();
  train_cmd->add_option("--data", tr.data, "Dataset container (default: generate from data.* keys)");
  train_cmd->add_option("-o,--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--set", tr.overrides, "Override a config key (key=value), repeatable");

  VerifyArgs ver;
  auto* ver_cmd = app.add_subcommand("dynamics-verify", "Check first-order exactness of the predicted W_e update");
  ver_cmd->add_option("-d,--width", ver.d, "Width d")->capture_default_str();
  ver_cmd->add_option("-N,--depth", ver.depth, "Depth N")->capture_default_str();
  ver_cmd->add_option("--eta", ver.eta, "Step size")->capture_default_str();
  ver_cmd->add_option("--trials", ver.trials, "Trials")->capture_default_str();
  ver_cmd->add_option("--seed", ver.seed, "Seed")->capture_default_str();
  ver_cmd->add_option("--cap", ver.cap, "Largest allowed d")->capture_default_str();
  ver_cmd->add_option("--json", ver.json, "Write a JSON report here");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a grid over N, alpha, seeds");
  sweep_cmd->add_option("-c,--config", sw.config, "Base config file")->required();
  sweep_cmd->add_option("--data", sw.data, "Dataset container shared by all runs");
  sweep_cmd->add_option("-o,--out", sw.out, "Output directory")->required();
  sweep_cmd->add_option("--set", sw.overrides, "Override a config key (key=value), repeatable");
  sweep_cmd->add_option("-N,--depths", sw.depths, "Depths")->delimiter(',');
  sweep_cmd->add_option("--alpha", sw.alphas, "Alphas (escalation: the starting alpha)")->delimiter(',');
  sweep_cmd->add_option("--seeds", sw.seeds, "Seeds")->delimiter(',');
  sweep_cmd->add_option("--workers", sw.workers, "Concurrent runs")->capture_default_str();
  sweep_cmd->add_flag("--escalate", sw.escalate, "Raise alpha in fixed increments until divergence");
  sweep_cmd->add_option("--increment", sw.increment, "Escalation increment")->capture_default_str();
  sweep_cmd->add_option("--max-levels", sw.max_levels, "Escalation levels")->capture_default_str();

  ReportArgs rep;
  auto* rep_cmd = app.add_subcommand("report", "Merge metrics.csv files into long format");
  rep_cmd->add_option("inputs", rep.inputs, "metrics.csv files")->required();
  rep_cmd->add_option("-o,--out", rep.out, "Output CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*ver_cmd) return cmd_dynamics_verify(ver);
    if (*sweep_cmd) return cmd_sweep(sw);
    if (*rep_cmd) return cmd_report(rep);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CsvError& e) {
    std::cerr << "csv error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << " (offset " << e.offset() << ")\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
