#include "greedyrank/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace greedyrank {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out)) {
    throw std::invalid_argument("'" + std::string(key) + "' expects a finite number, got '" + std::string(v) + "'");
  }
  return out;
}

std::int64_t parse_int(std::string_view key, std::string_view v) {
  std::int64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw std::invalid_argument("'" + std::string(key) + "' expects an integer, got '" + std::string(v) + "'");
  }
  return out;
}

std::int64_t parse_nonneg(std::string_view key, std::string_view v) {
  const auto out = parse_int(key, v);
  if (out < 0) throw std::invalid_argument("'" + std::string(key) + "' must be >= 0");
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw std::invalid_argument("'" + std::string(key) + "' expects an unsigned integer, got '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("'" + std::string(key) + "' expects true or false, got '" + std::string(v) + "'");
}

template <typename E>
E parse_enum(std::string_view key, std::string_view v, std::initializer_list<std::pair<std::string_view, E>> names) {
  std::string allowed;
  for (const auto& [name, value] : names) {
    if (v == name) return value;
    if (!allowed.empty()) allowed += "|";
    allowed += name;
  }
  throw std::invalid_argument("'" + std::string(key) + "' expects " + allowed + ", got '" + std::string(v) + "'");
}

std::string int_text(std::int64_t v) { return std::to_string(v); }

struct Setting {
  std::string_view key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Setting>& settings() {
  static const std::vector<Setting> table = {
      {"model.kind",
       [](ExperimentConfig& c, std::string_view v) {
         c.train.bottleneck = parse_enum<BottleneckKind>(
             "model.kind", v,
             {{"vanilla", BottleneckKind::Vanilla}, {"stack", BottleneckKind::Stack}, {"explicit", BottleneckKind::Explicit}});
       },
       [](const ExperimentConfig& c) { return std::string(to_string(c.train.bottleneck)); }},
      {"model.encoder",
       [](ExperimentConfig& c, std::string_view v) {
         c.train.encoder =
             parse_enum<EncoderKind>("model.encoder", v, {{"linear", EncoderKind::Linear}, {"mlp", EncoderKind::Mlp}});
       },
       [](const ExperimentConfig& c) { return std::string(to_string(c.train.encoder)); }},
      {"model.d", [](ExperimentConfig& c, std::string_view v) { c.train.latent_dim = parse_int("model.d", v); },
       [](const ExperimentConfig& c) { return int_text(c.train.latent_dim); }},
      {"model.hidden",
       [](ExperimentConfig& c, std::string_view v) {
         std::vector<Eigen::Index> widths;
         while (!v.empty()) {
           const auto comma = v.find(',');
           widths.push_back(parse_int("model.hidden", trim(v.substr(0, comma))));
           if (comma == std::string_view::npos) break;
           v.remove_prefix(comma + 1);
         }
         c.train.hidden = std::move(widths);
       },
       [](const ExperimentConfig& c) {
         std::string out;
         for (std::size_t i = 0; i < c.train.hidden.size(); ++i) {
           if (i > 0) out += ",";
           out += int_text(c.train.hidden[i]);
         }
         return out;
       }},
      {"model.activation",
       [](ExperimentConfig& c, std::string_view v) { c.train.activation = parse_activation(v); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.train.activation)); }},
      {"model.init_std", [](ExperimentConfig& c, std::string_view v) { c.train.init_std = parse_double("model.init_std", v); },
       [](const ExperimentConfig& c) { return format_real(c.train.init_std); }},
      {"stack.N", [](ExperimentConfig& c, std::string_view v) { c.train.depth = static_cast<int>(parse_int("stack.N", v)); },
       [](const ExperimentConfig& c) { return int_text(c.train.depth); }},
      {"stack.alpha", [](ExperimentConfig& c, std::string_view v) { c.train.alpha = parse_double("stack.alpha", v); },
       [](const ExperimentConfig& c) { return format_real(c.train.alpha); }},
      {"stack.init",
       [](ExperimentConfig& c, std::string_view v) {
         c.train.init = parse_enum<InitKind>("stack.init", v, {{"he", InitKind::He}, {"orthogonal", InitKind::Orthogonal}});
       },
       [](const ExperimentConfig& c) { return std::string(to_string(c.train.init)); }},
      {"stack.total_scale",
       [](ExperimentConfig& c, std::string_view v) { c.train.total_scale = parse_double("stack.total_scale", v); },
       [](const ExperimentConfig& c) { return format_real(c.train.total_scale); }},
      {"stack.he_slope", [](ExperimentConfig& c, std::string_view v) { c.train.he_slope = parse_double("stack.he_slope", v); },
       [](const ExperimentConfig& c) { return format_real(c.train.he_slope); }},
      {"explicit.k", [](ExperimentConfig& c, std::string_view v) { c.train.explicit_k = parse_int("explicit.k", v); },
       [](const ExperimentConfig& c) { return int_text(c.train.explicit_k); }},
      {"opt.kind", [](ExperimentConfig& c, std::string_view v) { c.train.optimizer = parse_optimizer(v); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.train.optimizer)); }},
      {"opt.lr", [](ExperimentConfig& c, std::string_view v) { c.train.learning_rate = parse_double("opt.lr", v); },
       [](const ExperimentConfig& c) { return format_real(c.train.learning_rate); }},
      {"opt.bottleneck_scale",
       [](ExperimentConfig& c, std::string_view v) {
         if (v == "1/N") {
           c.train.bottleneck_scale.reset();
         } else {
           c.train.bottleneck_scale = parse_double("opt.bottleneck_scale", v);
         }
       },
       [](const ExperimentConfig& c) {
         return c.train.bottleneck_scale ? format_real(*c.train.bottleneck_scale) : std::string("1/N");
       }},
      {"train.steps", [](ExperimentConfig& c, std::string_view v) { c.train.steps = parse_nonneg("train.steps", v); },
       [](const ExperimentConfig& c) { return int_text(c.train.steps); }},
      {"train.epochs", [](ExperimentConfig& c, std::string_view v) { c.train.epochs = parse_nonneg("train.epochs", v); },
       [](const ExperimentConfig& c) { return int_text(c.train.epochs); }},
      {"train.batch", [](ExperimentConfig& c, std::string_view v) { c.train.batch = parse_nonneg("train.batch", v); },
       [](const ExperimentConfig& c) { return int_text(c.train.batch); }},
      {"train.two_stage", [](ExperimentConfig& c, std::string_view v) { c.two_stage = parse_bool("train.two_stage", v); },
       [](const ExperimentConfig& c) { return std::string(c.two_stage ? "true" : "false"); }},
      {"rank.threshold",
       [](ExperimentConfig& c, std::string_view v) { c.train.rank_threshold = parse_double("rank.threshold", v); },
       [](const ExperimentConfig& c) { return format_real(c.train.rank_threshold); }},
      {"eval.size", [](ExperimentConfig& c, std::string_view v) { c.train.eval_size = parse_nonneg("eval.size", v); },
       [](const ExperimentConfig& c) { return int_text(c.train.eval_size); }},
      {"log.every", [](ExperimentConfig& c, std::string_view v) { c.train.log_every = parse_int("log.every", v); },
       [](const ExperimentConfig& c) { return int_text(c.train.log_every); }},
      {"log.topk", [](ExperimentConfig& c, std::string_view v) { c.train.top_k = static_cast<int>(parse_int("log.topk", v)); },
       [](const ExperimentConfig& c) { return int_text(c.train.top_k); }},
      {"plateau.patience",
       [](ExperimentConfig& c, std::string_view v) { c.train.patience = static_cast<int>(parse_int("plateau.patience", v)); },
       [](const ExperimentConfig& c) { return int_text(c.train.patience); }},
      {"plateau.epoch_steps",
       [](ExperimentConfig& c, std::string_view v) { c.train.epoch_steps = parse_int("plateau.epoch_steps", v); },
       [](const ExperimentConfig& c) { return int_text(c.train.epoch_steps); }},
      {"stage1.max_epochs",
       [](ExperimentConfig& c, std::string_view v) { c.train.stage1_max_epochs = parse_nonneg("stage1.max_epochs", v); },
       [](const ExperimentConfig& c) { return int_text(c.train.stage1_max_epochs); }},
      {"stage2.init",
       [](ExperimentConfig& c, std::string_view v) {
         c.train.stage2_init = parse_enum<Stage2Init>("stage2.init", v, {{"warm", Stage2Init::Warm}, {"fresh", Stage2Init::Fresh}});
       },
       [](const ExperimentConfig& c) { return std::string(to_string(c.train.stage2_init)); }},
      {"diverge.factor",
       [](ExperimentConfig& c, std::string_view v) { c.train.diverge_factor = parse_double("diverge.factor", v); },
       [](const ExperimentConfig& c) { return format_real(c.train.diverge_factor); }},
      {"diverge.window",
       [](ExperimentConfig& c, std::string_view v) { c.train.diverge_window = parse_int("diverge.window", v); },
       [](const ExperimentConfig& c) { return int_text(c.train.diverge_window); }},
      {"seed", [](ExperimentConfig& c, std::string_view v) { c.train.seed = parse_u64("seed", v); },
       [](const ExperimentConfig& c) { return std::to_string(c.train.seed); }},
      {"data.kind",
       [](ExperimentConfig& c, std::string_view v) {
         c.data.kind = parse_enum<Provenance>("data.kind", v, {{"lowrank", Provenance::LowRank}, {"manifold", Provenance::Manifold}});
       },
       [](const ExperimentConfig& c) { return std::string(to_string(c.data.kind)); }},
      {"data.n", [](ExperimentConfig& c, std::string_view v) { c.data.n = parse_int("data.n", v); },
       [](const ExperimentConfig& c) { return int_text(c.data.n); }},
      {"data.D", [](ExperimentConfig& c, std::string_view v) { c.data.dim = parse_int("data.D", v); },
       [](const ExperimentConfig& c) { return int_text(c.data.dim); }},
      {"data.r", [](ExperimentConfig& c, std::string_view v) { c.data.rank = parse_int("data.r", v); },
       [](const ExperimentConfig& c) { return int_text(c.data.rank); }},
      {"data.s", [](ExperimentConfig& c, std::string_view v) { c.data.noise_std = parse_double("data.s", v); },
       [](const ExperimentConfig& c) { return format_real(c.data.noise_std); }},
      {"data.scale", [](ExperimentConfig& c, std::string_view v) { c.data.scale = parse_double("data.scale", v); },
       [](const ExperimentConfig& c) { return format_real(c.data.scale); }},
      {"data.seed",
       [](ExperimentConfig& c, std::string_view v) {
         if (v == "seed") {
           c.data.seed.reset();
         } else {
           c.data.seed = parse_u64("data.seed", v);
         }
       },
       [](const ExperimentConfig& c) { return c.data.seed ? std::to_string(*c.data.seed) : std::string("seed"); }},
  };
  return table;
}

const Setting* find_setting(std::string_view key) {
  for (const auto& s : settings()) {
    if (s.key == key) return &s;
  }
  return nullptr;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = line.find(',');
    out.push_back(line.substr(0, comma));
    if (comma == std::string_view::npos) break;
    line.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

Dataset generate(const DataSpec& spec, std::uint64_t fallback_seed) {
  RandomSource rng(spec.seed.value_or(fallback_seed));
  if (spec.kind == Provenance::Manifold) return gen_manifold(rng, spec.n, spec.dim, spec.rank, spec.scale);
  if (spec.kind != Provenance::LowRank) throw std::invalid_argument("generate: only lowrank and manifold data can be generated");
  return gen_lowrank(rng, spec.n, spec.dim, spec.rank, spec.noise_std);
}

void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  const Setting* s = find_setting(key);
  if (s == nullptr) throw std::invalid_argument("unknown key '" + std::string(key) + "'");
  s->set(cfg, value);
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);

    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected 'key = value'", line_no);
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("missing key before '='", line_no);
    if (value.empty()) throw ConfigError("missing value for '" + std::string(key) + "'", line_no);
    if (!seen.insert(std::string(key)).second) throw ConfigError("duplicate key '" + std::string(key) + "'", line_no);
    try {
      apply_setting(cfg, key, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), line_no);
    }
  }
  try {
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), 0);
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what(), 0);
  }
  return parse_config(text);
}

std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(settings().size());
  for (const auto& s : settings()) out.emplace_back(std::string(s.key), s.get(cfg));
  return out;
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> metrics_header(int top_k) {
  std::vector<std::string> h{"step", "epoch", "loss", "we_rank", "latent_rank", "balance_residual"};
  for (int i = 1; i <= top_k; ++i) h.push_back("sv_we_" + std::to_string(i));
  for (int i = 1; i <= top_k; ++i) h.push_back("sv_z_" + std::to_string(i));
  return h;
}

void write_metrics_csv(std::ostream& out, const RunMetrics& metrics, int top_k) {
  const auto header = metrics_header(top_k);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i > 0 ? "," : "") << header[i];
  out << '\n';
  const auto k = static_cast<std::size_t>(top_k);
  for (const auto& r : metrics.records) {
    out << r.step << ',' << r.epoch << ',' << format_real(r.loss) << ',' << r.we_rank << ',' << r.latent_rank << ','
        << format_real(r.balance_residual);
    for (std::size_t i = 0; i < k; ++i) out << ',' << format_real(i < r.sv_we.size() ? r.sv_we[i] : 0.0);
    for (std::size_t i = 0; i < k; ++i) out << ',' << format_real(i < r.sv_z.size() ? r.sv_z[i] : 0.0);
    out << '\n';
  }
}

void write_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics, int top_k) {
  auto out = open_out(path);
  write_metrics_csv(out, metrics, top_k);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

CsvTable parse_metrics_csv(std::string_view text, const std::string& name) {
  CsvTable table;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (line_no == 1) {
      for (auto cell : split_commas(line)) table.header.emplace_back(trim(cell));
      if (table.header.size() < 6 || table.header[0] != "step" || table.header[1] != "epoch") {
        throw CsvError(name, line_no, "not a metrics header");
      }
      continue;
    }
    if (line.empty()) {
      if (text.empty()) break;
      throw CsvError(name, line_no, "empty row");
    }
    const auto cells = split_commas(line);
    if (cells.size() != table.header.size()) {
      throw CsvError(name, line_no,
                     "expected " + std::to_string(table.header.size()) + " columns, got " + std::to_string(cells.size()));
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto cell = trim(cells[c]);
      double v = 0.0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size() || cell.empty()) {
        throw CsvError(name, line_no, "bad number '" + std::string(cell) + "' in column " + table.header[c]);
      }
      row.push_back(v);
    }
    table.rows.push_back(std::move(row));
  }
  if (line_no == 0) throw CsvError(name, 1, "empty file");
  return table;
}

CsvTable read_metrics_csv(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::runtime_error& e) {
    throw CsvError(path.string(), 0, e.what());
  }
  return parse_metrics_csv(text, path.string());
}

void write_report(std::ostream& out, const std::vector<std::filesystem::path>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("write_report: no input files");
  std::vector<CsvTable> tables;
  tables.reserve(inputs.size());
  for (const auto& p : inputs) {
    tables.push_back(read_metrics_csv(p));
    if (tables.back().header != tables.front().header) {
      throw CsvError(p.string(), 1, "header differs from " + inputs.front().string());
    }
  }

  out << "run_id,step,series,value\n";
  const auto& header = tables.front().header;
  for (std::size_t t = 0; t < tables.size(); ++t) {
    const std::string run_id = "run" + std::to_string(t) + "_" + inputs[t].parent_path().filename().string();
    for (const auto& row : tables[t].rows) {
      const auto step = static_cast<std::int64_t>(row[0]);
      for (std::size_t c = 2; c < header.size(); ++c) {
        out << run_id << ',' << step << ',' << header[c] << ',' << format_real(row[c]) << '\n';
      }
    }
  }
}

nlohmann::json make_summary(const ExperimentConfig& cfg, const RunMetrics& metrics, const SummaryExtras& extras) {
  nlohmann::json j;
  j["schema_version"] = kSummarySchemaVersion;
  nlohmann::json echo = nlohmann::json::object();
  for (const auto& [k, v] : config_entries(cfg)) echo[k] = v;
  j["config"] = std::move(echo);
  j["seed"] = cfg.train.seed;
  j["generator"] = RandomSource::kGeneratorName;
  j["status"] = std::string(to_string(metrics.status));
  j["steps_run"] = metrics.steps_run;
  j["mse_convention"] = "mean over samples and dimensions";
  j["latent_rank_set"] = cfg.train.full_batch() ? "full training set"
                                                : "first eval.size training rows (0: all, up to 4096)";
  if (cfg.two_stage) {
    j["stage2"] = {{"init", std::string(to_string(cfg.train.stage2_init))},
                   {"encoder_decoder", "carried over from stage 1 unchanged"}};
  }
  if (const auto* last = metrics.final_record()) {
    j["final_loss"] = last->loss;
    j["final_latent_rank"] = last->latent_rank;
    j["final_we_rank"] = last->we_rank;
    j["final_balance_residual"] = last->balance_residual;
  } else {
    j["final_loss"] = nullptr;
    j["final_latent_rank"] = nullptr;
    j["final_we_rank"] = nullptr;
    j["final_balance_residual"] = nullptr;
  }
  if (metrics.last_finite_step) j["last_finite_step"] = *metrics.last_finite_step;
  if (extras.detected_rank) j["detected_rank"] = *extras.detected_rank;
  if (extras.last_stable_alpha) j["last_stable_alpha"] = *extras.last_stable_alpha;
  j["wall_clock_seconds"] = extras.wall_clock_seconds;
  return j;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace greedyrank
