#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "greedyrank/dynamics.hpp"
#include "greedyrank/io.hpp"
#include "greedyrank/spectrum.hpp"
#include "greedyrank/stack.hpp"
#include "greedyrank/trainer.hpp"

namespace py = pybind11;
using namespace greedyrank;

namespace {

py::dict metrics_dict(const RunMetrics& m) {
  py::list records;
  for (const auto& r : m.records) {
    py::dict d;
    d["step"] = r.step;
    d["epoch"] = r.epoch;
    d["loss"] = r.loss;
    d["we_rank"] = r.we_rank;
    d["latent_rank"] = r.latent_rank;
    d["balance_residual"] = r.balance_residual;
    d["sv_we"] = r.sv_we;
    d["sv_z"] = r.sv_z;
    records.append(std::move(d));
  }
  py::dict out;
  out["status"] = std::string(to_string(m.status));
  out["steps_run"] = m.steps_run;
  out["records"] = std::move(records);
  out["last_finite_step"] = m.last_finite_step ? py::cast(*m.last_finite_step) : py::none();
  return out;
}

Dataset wrap(const Matrix& x) {
  Dataset d;
  d.x = x;
  return d;
}

// Config text plus key=value overrides, validated.
ExperimentConfig make_config(const std::string& text, const std::map<std::string, std::string>& overrides) {
  ExperimentConfig cfg = parse_config(text);
  for (const auto& [k, v] : overrides) apply_setting(cfg, k, v);
  cfg.train.validate();
  return cfg;
}

Dataset data_for(const ExperimentConfig& cfg, const std::optional<Matrix>& x) {
  return x ? wrap(*x) : generate(cfg.data, cfg.train.seed);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Deep linear bottleneck autoencoder core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<CsvError>(m, "CsvError", PyExc_ValueError);

  m.attr("generator") = std::string(RandomSource::kGeneratorName);

  m.def(
      "gen_lowrank",
      [](Eigen::Index n, Eigen::Index dim, Eigen::Index rank, double noise_std, std::uint64_t seed) {
        RandomSource rng(seed);
        return gen_lowrank(rng, n, dim, rank, noise_std).x;
      },
      py::arg("n") = 64, py::arg("dim") = 256, py::arg("rank") = 8, py::arg("noise_std") = 0.2, py::arg("seed") = 0);
  m.def(
      "gen_manifold",
      [](Eigen::Index n, Eigen::Index dim, Eigen::Index rank, double scale, std::uint64_t seed) {
        RandomSource rng(seed);
        return gen_manifold(rng, n, dim, rank, scale).x;
      },
      py::arg("n") = 512, py::arg("dim") = 32, py::arg("rank") = 4, py::arg("scale") = kDefaultManifoldScale,
      py::arg("seed") = 0);
  m.def("read_idx", [](const std::string& path) { return read_idx(path).x; }, py::arg("path"));

  m.def("singular_values", [](const Matrix& a) { return singular_values(a); }, py::arg("a"));
  m.def(
      "estimate_rank", [](const std::vector<double>& s, double t) { return estimate_rank(s, t); }, py::arg("sv"),
      py::arg("threshold") = kDefaultRankThreshold);
  m.def(
      "latent_rank", [](const Matrix& z, double t) { return latent_spectrum(z, t).rank; }, py::arg("codes"),
      py::arg("threshold") = kDefaultRankThreshold);

  m.def("mu", &mu, py::arg("sigma_r"), py::arg("sigma_rp"), py::arg("depth"));
  m.def(
      "build_P", [](const Matrix& w, int depth) { return build_P(w, depth); }, py::arg("w_e"), py::arg("depth"));
  m.def(
      "predicted_delta", [](const Matrix& w, int depth, const Matrix& g, double eta) { return predicted_delta(w, depth, g, eta); },
      py::arg("w_e"), py::arg("depth"), py::arg("grad"), py::arg("eta"));
  m.def(
      "predicted_delta_modal",
      [](const Matrix& w, int depth, const Matrix& g, double eta) { return predicted_delta_modal(w, depth, g, eta); },
      py::arg("w_e"), py::arg("depth"), py::arg("grad"), py::arg("eta"));
  m.def(
      "order_trial",
      [](Eigen::Index d, int depth, double eta, std::uint64_t seed) {
        RandomSource rng(seed);
        const OrderCheck c = random_order_trial(rng, d, depth, eta);
        py::dict out;
        out["error_full"] = c.error_full;
        out["error_half"] = c.error_half;
        out["ratio"] = c.ratio ? py::cast(*c.ratio) : py::none();
        out["exact_within_fp"] = c.exact_within_fp;
        out["passed"] = c.passed();
        return out;
      },
      py::arg("d"), py::arg("depth"), py::arg("eta") = 1e-3, py::arg("seed") = 0);

  m.def(
      "orthogonal_stack",
      [](Eigen::Index d, int depth, double total_scale, double alpha, std::uint64_t seed) {
        RandomSource rng(seed);
        const LinearStack s = init_stack(rng, d, depth, OrthogonalInit{total_scale, alpha});
        py::dict out;
        out["layers"] = s.layers;
        out["alpha"] = s.alpha;
        out["effective"] = effective_matrix(s);
        out["balance_residual"] = balance_residual(s);
        return out;
      },
      py::arg("d"), py::arg("depth"), py::arg("total_scale") = 1.0, py::arg("alpha") = 1.0, py::arg("seed") = 0);

  m.def(
      "config_entries",
      [](const std::string& text, const std::map<std::string, std::string>& overrides) {
        return config_entries(make_config(text, overrides));
      },
      py::arg("text") = "", py::arg("overrides") = std::map<std::string, std::string>{});

  m.def(
      "train",
      [](const std::string& text, const std::map<std::string, std::string>& overrides, std::optional<Matrix> x) {
        const ExperimentConfig cfg = make_config(text, overrides);
        const Dataset data = data_for(cfg, x);
        RunMetrics out;
        {
          py::gil_scoped_release nogil;
          out = train(cfg.train, data);
        }
        return metrics_dict(out);
      },
      py::arg("config") = "", py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("data") = py::none(),
      "Trains one model from config text. Without data, generates it from the data.* keys.");

  m.def(
      "two_stage",
      [](const std::string& text, const std::map<std::string, std::string>& overrides, std::optional<Matrix> x) {
        const ExperimentConfig cfg = make_config(text, overrides);
        const Dataset data = data_for(cfg, x);
        StageResult r;
        {
          py::gil_scoped_release nogil;
          r = two_stage(cfg.train, data);
        }
        py::dict out;
        out["detected_rank"] = r.detected_rank;
        out["plateau_reached"] = r.plateau_reached;
        out["rank_history"] = r.rank_history;
        out["swap_step"] = r.swap_step;
        out["stage1"] = metrics_dict(r.stage1);
        out["stage2"] = metrics_dict(r.stage2);
        return out;
      },
      py::arg("config") = "", py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("data") = py::none());

  m.def(
      "greedy_emergence",
      [](const std::vector<std::vector<double>>& sv_we, const std::vector<std::int64_t>& steps, int k) {
        RunMetrics metrics;
        for (std::size_t i = 0; i < steps.size() && i < sv_we.size(); ++i) {
          MetricsRecord r;
          r.step = steps[i];
          r.sv_we = sv_we[i];
          metrics.records.push_back(std::move(r));
        }
        const auto crossings = greedy_emergence_report(metrics, k);
        return py::make_tuple(crossings, count_inversions(crossings));
      },
      py::arg("sv_we"), py::arg("steps"), py::arg("k") = 8,
      "Half-of-final crossing step per singular value and the inversion count.");
}
