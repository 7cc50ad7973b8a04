#include "doctest.h"
#include "greedyrank/stack.hpp"
#include "greedyrank/trainer.hpp"

using namespace greedyrank;

namespace {

TrainConfig small_linear(int depth = 3, double alpha = 1.0) {
  TrainConfig c;
  c.latent_dim = 6;
  c.depth = depth;
  c.alpha = alpha;
  c.total_scale = 0.5;
  c.steps = 60;
  c.log_every = 10;
  c.top_k = 4;
  c.learning_rate = 0.05;
  return c;
}

Dataset small_data(std::uint64_t seed = 0) {
  RandomSource rng(seed);
  return gen_lowrank(rng, 12, 10, 2, 0.1);
}

bool same_metrics(const RunMetrics& a, const RunMetrics& b) {
  if (a.records.size() != b.records.size() || a.status != b.status || a.steps_run != b.steps_run) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& x = a.records[i];
    const auto& y = b.records[i];
    if (x.step != y.step || x.epoch != y.epoch || x.loss != y.loss || x.we_rank != y.we_rank ||
        x.latent_rank != y.latent_rank || x.balance_residual != y.balance_residual || x.sv_we != y.sv_we ||
        x.sv_z != y.sv_z) {
      return false;
    }
  }
  return true;
}

MetricsRecord rec(std::int64_t step, std::vector<double> sv) {
  MetricsRecord r;
  r.step = step;
  r.sv_we = std::move(sv);
  return r;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("rank_plateau examples") {
  CHECK(rank_plateau(std::vector<std::size_t>{9, 8, 8, 8, 8, 8, 8}, 5));
  CHECK_FALSE(rank_plateau(std::vector<std::size_t>{8, 8, 8, 8, 8, 9}, 5));
  CHECK_FALSE(rank_plateau(std::vector<std::size_t>{8, 8, 8}, 5));
  CHECK(rank_plateau(std::vector<std::size_t>{3, 3}, 1));
}

TEST_CASE("divergence_check examples") {
  CHECK(divergence_check(std::vector<double>{1.0, 0.5, std::nan("")}));
  CHECK(divergence_check(std::vector<double>{1.0, std::numeric_limits<double>::infinity()}));
  std::vector<double> down(300);
  for (std::size_t i = 0; i < down.size(); ++i) down[i] = 1.0 / (1.0 + i);
  CHECK_FALSE(divergence_check(down));

  std::vector<double> jump(1, 1.0);
  jump.insert(jump.end(), 100, 20.0);
  CHECK(divergence_check(jump));
  std::vector<double> brief(1, 1.0);
  brief.insert(brief.end(), 99, 20.0);
  brief.push_back(1.0);
  CHECK_FALSE(divergence_check(brief));
  CHECK(divergence_check(brief, 10.0, 99));
}

TEST_CASE("zero steps records nothing and leaves the initialization") {
  TrainConfig c = small_linear();
  c.steps = 0;
  AeModel trained;
  const RunMetrics m = train(c, small_data(), trained);
  CHECK(m.records.empty());
  CHECK(m.steps_run == 0);
  CHECK(m.status == RunStatus::MaxSteps);

  RandomSource root(c.seed);
  RandomSource init = root.split();
  const AeModel fresh = build_model(c, 10, init);
  CHECK(trained.encoder.weights[0] == fresh.encoder.weights[0]);
  CHECK(trained.stack().layers[1] == fresh.stack().layers[1]);
}

TEST_CASE("train logs at the cadence and at the end") {
  TrainConfig c = small_linear();
  c.steps = 55;
  const RunMetrics m = train(c, small_data());
  REQUIRE(m.records.size() == 7);  // 0,10,...,50 and 55
  CHECK(m.records.front().step == 0);
  CHECK(m.records[5].step == 50);
  CHECK(m.records.back().step == 55);
  CHECK(m.steps_run == 55);
  for (std::size_t i = 1; i < m.records.size(); ++i) CHECK(m.records[i].step > m.records[i - 1].step);
  for (const auto& r : m.records) {
    CHECK(r.sv_we.size() == 4);
    CHECK(r.sv_z.size() == 4);
    CHECK(std::isfinite(r.loss));
  }
  CHECK(m.records.back().loss < m.records.front().loss);
}

TEST_CASE("default log interval depends on the mode") {
  TrainConfig c;
  CHECK(c.log_interval() == 20);
  c.batch = 16;
  CHECK(c.log_interval() == 1);
  c.log_every = 3;
  CHECK(c.log_interval() == 3);
}

TEST_CASE("train is bitwise deterministic") {
  const TrainConfig c = small_linear(4, 2.0);
  CHECK(same_metrics(train(c, small_data()), train(c, small_data())));
  TrainConfig other = c;
  other.seed = 1;
  CHECK_FALSE(same_metrics(train(c, small_data()), train(other, small_data())));
}

TEST_CASE("minibatch training with Adam and an MLP is deterministic") {
  TrainConfig c = small_linear();
  c.encoder = EncoderKind::Mlp;
  c.hidden = {8};
  c.optimizer = OptimizerKind::Adam;
  c.learning_rate = 1e-3;
  c.batch = 5;
  c.epochs = 4;
  c.log_every = 1;
  const RunMetrics a = train(c, small_data());
  CHECK(a.records.size() == 5);  // epochs 0..4
  CHECK(a.steps_run == 4 * 3);   // 12 rows in batches of 5
  CHECK(same_metrics(a, train(c, small_data())));
}

TEST_CASE("shape errors surface before step 0") {
  TrainConfig c = small_linear();
  RandomSource rng(0);
  AeModel m = build_model(c, 7, rng);
  OptimizerState opt = build_optimizer(c, m);
  RandomSource batch(1);
  CHECK_THROWS_AS(run_training(m, opt, c, small_data(), batch), std::invalid_argument);
  TrainConfig bad = c;
  bad.learning_rate = -1.0;
  CHECK_THROWS_AS(train(bad, small_data()), std::invalid_argument);
}

TEST_CASE("divergence stops the run and records the last finite step") {
  TrainConfig c = small_linear(3, 1.0);
  c.learning_rate = 50.0;
  c.steps = 500;
  const RunMetrics m = train(c, small_data());
  CHECK(m.status == RunStatus::Diverged);
  REQUIRE(m.last_finite_step.has_value());
  CHECK(*m.last_finite_step < 500);
  CHECK(std::isfinite(*m.last_finite_loss));
}

TEST_CASE("bottleneck rate multiplier is 1/N unless overridden") {
  TrainConfig c = small_linear(7);
  c.learning_rate = 0.03;
  RandomSource rng(0);
  AeModel m = build_model(c, 10, rng);
  const OptimizerState opt = build_optimizer(c, m);
  CHECK(opt.group_rate(ParamGroup::Bottleneck) == 0.03 * (1.0 / 7));
  CHECK(opt.group_rate(ParamGroup::Encoder) == 0.03);
  CHECK(m.stack().lr_group_scale == 1.0 / 7);

  c.bottleneck_scale = 1.0;
  AeModel m2 = build_model(c, 10, rng);
  CHECK(build_optimizer(c, m2).group_rate(ParamGroup::Bottleneck) == 0.03);

  TrainConfig e = small_linear();
  e.bottleneck = BottleneckKind::Explicit;
  e.explicit_k = 2;
  AeModel m3 = build_model(e, 10, rng);
  CHECK(build_optimizer(e, m3).bottleneck_scale == 0.5);
}

TEST_CASE("vanilla records report full W_e rank") {
  TrainConfig c = small_linear();
  c.bottleneck = BottleneckKind::Vanilla;
  c.steps = 5;
  const RunMetrics m = train(c, small_data());
  CHECK(m.records.front().we_rank == 6);
  CHECK(m.records.front().balance_residual == 0.0);
}

TEST_CASE("orthogonal stack records start balanced") {
  const RunMetrics m = train(small_linear(4, 2.0), small_data());
  CHECK(m.records.front().balance_residual < 1e-12);
  CHECK(m.records.front().we_rank == 6);
}

TEST_CASE("two_stage: plateau at epoch 0 gives a pass-through explicit subnet") {
  TrainConfig c = small_linear(3, 1.0);
  c.total_scale = 1.0;
  c.learning_rate = 1e-6;  // ranks cannot move
  c.patience = 2;
  c.steps = 5;
  const StageResult r = two_stage(c, small_data());
  CHECK(r.plateau_reached);
  CHECK(r.detected_rank == 6);
  CHECK(r.rank_history.size() == 3);
  CHECK(r.swap_step == 2);
  CHECK(r.stage2.records.front().step == r.swap_step);
  CHECK(r.stage2.records.back().we_rank <= r.detected_rank);
}

TEST_CASE("two_stage: stage-2 latent rank never exceeds the detected rank") {
  for (auto init : {Stage2Init::Warm, Stage2Init::Fresh}) {
    TrainConfig c = small_linear(3, 2.0);
    c.total_scale = 0.01;
    c.epoch_steps = 20;
    c.patience = 3;
    c.stage1_max_epochs = 40;
    c.stage2_init = init;
    c.steps = 100;
    const StageResult r = two_stage(c, small_data());
    CAPTURE(to_string(init));
    CHECK(r.detected_rank >= 1);
    for (const auto& rec : r.stage2.records) CHECK(rec.latent_rank <= r.detected_rank);
  }
}

TEST_CASE("two_stage with no stage-2 budget") {
  TrainConfig c = small_linear(3, 1.0);
  c.total_scale = 1.0;
  c.learning_rate = 1e-6;
  c.patience = 1;
  c.steps = 0;
  const StageResult r = two_stage(c, small_data());
  CHECK(r.stage2.records.empty());
  CHECK(r.detected_rank == 6);
  CHECK_FALSE(r.stage1.records.empty());
}

TEST_CASE("two_stage requires a stack and reports stage-1 divergence") {
  TrainConfig v = small_linear();
  v.bottleneck = BottleneckKind::Vanilla;
  CHECK_THROWS_AS(two_stage(v, small_data()), std::invalid_argument);

  TrainConfig d = small_linear();
  d.learning_rate = 50.0;
  d.epoch_steps = 100;
  d.stage1_max_epochs = 5;
  CHECK_THROWS_AS(two_stage(d, small_data()), DivergenceError);
}

TEST_CASE("sweep of size 1 equals train; workers do not change results") {
  const TrainConfig base = small_linear(3, 2.0);
  auto data = [](std::uint64_t s) { return small_data(s); };
  const auto one = sweep(SweepGrid{{3}, {2.0}, {0}}, base, data);
  REQUIRE(one.size() == 1);
  REQUIRE(one[0].metrics.has_value());
  CHECK(same_metrics(*one[0].metrics, train(base, small_data(0))));

  const SweepGrid grid{{2, 3}, {1.0, 2.0}, {0, 1}};
  const auto serial = sweep(grid, base, data, 1);
  const auto parallel = sweep(grid, base, data, 3);
  REQUIRE(serial.size() == 8);
  CHECK(serial[0].depth == 2);
  CHECK(serial[7].seed == 1);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].depth == parallel[i].depth);
    CHECK(same_metrics(*serial[i].metrics, *parallel[i].metrics));
  }
}

TEST_CASE("sweep records failures and continues") {
  const RunFunction flaky = [](const TrainConfig& c, const Dataset& d) -> RunMetrics {
    if (c.depth == 2) throw std::runtime_error("boom");
    return train(c, d);
  };
  const auto runs = sweep(SweepGrid{{2, 3}, {1.0}, {0}}, small_linear(), [](std::uint64_t s) { return small_data(s); },
                          1, flaky);
  CHECK_FALSE(runs[0].metrics.has_value());
  CHECK(runs[0].error == "boom");
  CHECK(runs[1].metrics.has_value());
  CHECK_THROWS_AS(sweep(SweepGrid{{}, {1.0}, {0}}, small_linear(), [](std::uint64_t s) { return small_data(s); }),
                  std::invalid_argument);
}

TEST_CASE("alpha escalation with divergence rigged at level 2") {
  const double alpha0 = 4.0;
  const RunFunction rigged = [&](const TrainConfig& c, const Dataset&) {
    RunMetrics m;
    m.status = c.alpha >= alpha0 + 200.0 ? RunStatus::Diverged : RunStatus::MaxSteps;
    return m;
  };
  const EscalationResult r = alpha_escalation(small_linear(), small_data(), alpha0, 100.0, 10, rigged);
  REQUIRE(r.levels.size() == 3);
  CHECK(r.levels[2].status == RunStatus::Diverged);
  REQUIRE(r.last_stable_alpha.has_value());
  CHECK(*r.last_stable_alpha == alpha0 + 100.0);

  const RunFunction always = [](const TrainConfig&, const Dataset&) {
    RunMetrics m;
    m.status = RunStatus::Diverged;
    return m;
  };
  CHECK_FALSE(alpha_escalation(small_linear(), small_data(), 1.0, 100.0, 5, always).last_stable_alpha);
  const RunFunction never = [](const TrainConfig&, const Dataset&) { return RunMetrics{}; };
  const auto capped = alpha_escalation(small_linear(), small_data(), 1.0, 100.0, 4, never);
  CHECK(capped.levels.size() == 4);
  CHECK(*capped.last_stable_alpha == 301.0);
}

TEST_CASE("greedy_emergence_report examples") {
  RunMetrics flat;
  for (int s : {0, 10, 20}) flat.records.push_back(rec(s, {3.0, 2.0, 1.0}));
  CHECK(greedy_emergence_report(flat, 3) == std::vector<std::int64_t>{0, 0, 0});

  RunMetrics seq;
  seq.records = {rec(0, {0.0, 0.0}), rec(10, {0.9, 0.0}), rec(20, {1.0, 0.1}), rec(30, {1.0, 0.8}),
                 rec(40, {1.0, 1.0})};
  const auto c = greedy_emergence_report(seq, 2);
  CHECK(c[0] == 10);
  CHECK(c[1] == 30);
  CHECK(c[0] < c[1]);

  CHECK_THROWS_AS(greedy_emergence_report(RunMetrics{}, 2), std::invalid_argument);
  CHECK_THROWS_AS(greedy_emergence_report(seq, 3), std::invalid_argument);
}

TEST_CASE("count_inversions") {
  CHECK(count_inversions(std::vector<std::int64_t>{1, 2, 2, 5}) == 0);
  CHECK(count_inversions(std::vector<std::int64_t>{1, 3, 2, 5}) == 1);
  CHECK(count_inversions(std::vector<std::int64_t>{4, 3, 2, 1}) == 6);
}

}  // TEST_SUITE
