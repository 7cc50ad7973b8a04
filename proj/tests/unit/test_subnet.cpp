#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "greedyrank/autoencoder.hpp"
#include "greedyrank/optimizer.hpp"
#include "greedyrank/spectrum.hpp"
#include "greedyrank/stack.hpp"
#include "helpers.hpp"

using namespace greedyrank;
using testing::numeric_gradient;
using testing::rel_err;

namespace {

Matrix diag(std::initializer_list<double> v) {
  Eigen::VectorXd d(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) d[i++] = x;
  return d.asDiagonal();
}

double loss_of(const AeModel& m, const Matrix& x) { return mse_loss(x, forward(m, x).output).loss; }

// Compares every parameter gradient against central differences; returns the
// worst per-tensor relative error.
double worst_gradient_error(AeModel& model, const Matrix& x) {
  const ForwardCache cache = forward(model, x);
  const LossResult l = mse_loss(x, cache.output);
  const Gradients g = backward(model, cache, l.grad);
  double worst = 0.0;
  for (const ParamSlot& slot : parameter_slots(model, g)) {
    if (slot.value->size() == 0) continue;
    const Matrix num = numeric_gradient(*slot.value, [&] { return loss_of(model, x); });
    worst = std::max(worst, rel_err(*slot.grad, num));
  }
  return worst;
}

}  // namespace

TEST_SUITE("subnet") {

TEST_CASE("orthogonal init gives effective singular values equal to total_scale") {
  RandomSource rng(1);
  for (int n : {1, 2, 5, 16, 32}) {
    for (double alpha : {1.0, 2.0, 7.5}) {
      const LinearStack s = init_stack(rng, 12, n, OrthogonalInit{0.001, alpha});
      CHECK(s.alpha == alpha);
      CHECK(s.lr_group_scale == doctest::Approx(1.0 / n));
      for (double v : singular_values(effective_matrix(s))) CHECK(std::abs(v - 0.001) < 1e-12);
      CHECK(balance_residual(s) < 1e-12);
    }
  }
}

TEST_CASE("orthogonal init with unit scale and N=1") {
  RandomSource rng(2);
  const LinearStack s = init_stack(rng, 6, 1, OrthogonalInit{1.0, 3.0});
  const Matrix w = s.effective_layer(0);
  CHECK((w.transpose() * w - Matrix::Identity(6, 6)).norm() < 1e-12);
}

TEST_CASE("He init is imbalanced and uses fan-in std") {
  RandomSource rng(3);
  const LinearStack s = init_stack(rng, 128, 4, HeInit{});
  CHECK(s.alpha == 1.0);
  CHECK(balance_residual(s) > 0.1);

  RandomSource rng2(4);
  const LinearStack plain = init_stack(rng2, 200, 1, HeInit{0.0});
  const double var = plain.layers[0].array().square().mean();
  CHECK(std::sqrt(var) == doctest::Approx(std::sqrt(2.0 / 200)).epsilon(0.02));
}

TEST_CASE("init_stack argument errors") {
  RandomSource rng(0);
  CHECK_THROWS_AS(init_stack(rng, 4, 2, OrthogonalInit{0.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(init_stack(rng, 4, 2, OrthogonalInit{-1.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(init_stack(rng, 4, 2, OrthogonalInit{1.0, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(init_stack(rng, 0, 2, HeInit{}), std::invalid_argument);
  CHECK_THROWS_AS(init_stack(rng, 4, 0, HeInit{}), std::invalid_argument);
}

TEST_CASE("effective_matrix examples") {
  LinearStack id;
  id.width = 3;
  id.layers = {Matrix::Identity(3, 3)};
  CHECK(effective_matrix(id) == Matrix::Identity(3, 3));

  LinearStack two;
  two.width = 2;
  two.layers = {diag({3, 5}), diag({2, 1})};
  CHECK(effective_matrix(two) == diag({6, 5}));

  // Right-to-left order with non-commuting factors, and alpha^N overall.
  RandomSource rng(5);
  LinearStack s;
  s.width = 3;
  s.alpha = 1.5;
  s.layers = {gaussian_matrix(rng, 3, 3, 0, 1), gaussian_matrix(rng, 3, 3, 0, 1), gaussian_matrix(rng, 3, 3, 0, 1)};
  const Matrix expect = std::pow(1.5, 3) * s.layers[2] * s.layers[1] * s.layers[0];
  CHECK(rel_err(effective_matrix(s), expect) < 1e-14);

  const LinearStack o = init_stack(rng, 10, 7, OrthogonalInit{0.001, 2.0});
  const Matrix w = effective_matrix(o);
  CHECK((w * w.transpose() - 1e-6 * Matrix::Identity(10, 10)).norm() < 1e-12);
}

TEST_CASE("forward: identity vanilla model reproduces input") {
  AeModel m;
  m.encoder.weights = {Matrix::Identity(4, 4)};
  m.encoder.biases = {Matrix()};
  m.decoder = m.encoder;
  RandomSource rng(6);
  const Matrix x = gaussian_matrix(rng, 5, 4, 0, 1);
  CHECK(forward(m, x).output == x);
  CHECK(bottleneck_matrix(m) == Matrix::Identity(4, 4));
}

TEST_CASE("forward: zero stack gives zero codes and output") {
  RandomSource rng(7);
  LinearStack s;
  s.width = 3;
  s.layers = {Matrix::Zero(3, 3), Matrix::Zero(3, 3)};
  AeModel m = make_linear_ae(rng, 5, 3, 0.1, s);
  const ForwardCache c = forward(m, gaussian_matrix(rng, 4, 5, 0, 1));
  CHECK(c.latent().isZero(0.0));
  CHECK(c.output.isZero(0.0));
  CHECK(c.codes.size() == 3);
}

TEST_CASE("forward matches step-by-step recomputation") {
  RandomSource rng(8);
  LinearStack s = init_stack(rng, 3, 2, OrthogonalInit{0.5, 2.0});
  AeModel m = make_mlp_ae(rng, 4, {5}, 3, Activation::Tanh, s);
  const Matrix x = gaussian_matrix(rng, 6, 4, 0, 1);
  const ForwardCache c = forward(m, x);

  const auto affine = [](const Matrix& in, const Matrix& w, const Matrix& b) {
    Matrix out = in * w.transpose();
    if (b.size() > 0) out.rowwise() += b.row(0);
    return out;
  };
  Matrix h = affine(x, m.encoder.weights[0], m.encoder.biases[0]).array().tanh();
  Matrix z = affine(h, m.encoder.weights[1], m.encoder.biases[1]);
  Matrix zn = z * (2.0 * s.layers[0]).transpose() * (2.0 * s.layers[1]).transpose();
  Matrix g = affine(zn, m.decoder.weights[0], m.decoder.biases[0]).array().tanh();
  Matrix out = affine(g, m.decoder.weights[1], m.decoder.biases[1]);
  CHECK(rel_err(c.codes[0], z) < 1e-14);
  CHECK(rel_err(c.latent(), zn) < 1e-14);
  CHECK(rel_err(c.output, out) < 1e-14);
  CHECK(rel_err(latent_codes(m, x), zn) < 1e-14);
}

TEST_CASE("forward shape mismatch") {
  RandomSource rng(9);
  AeModel m = make_linear_ae(rng, 5, 3, 0.1, {});
  CHECK_THROWS_AS(forward(m, Matrix::Zero(2, 4)), std::invalid_argument);
}

TEST_CASE("mse_loss examples") {
  RandomSource rng(10);
  const Matrix x = gaussian_matrix(rng, 3, 4, 0, 1);
  const LossResult same = mse_loss(x, x);
  CHECK(same.loss == 0.0);
  CHECK(same.grad.isZero(0.0));

  const LossResult ones = mse_loss(Matrix::Zero(2, 2), Matrix::Ones(2, 2));
  CHECK(ones.loss == 1.0);
  CHECK((ones.grad.array() == 0.5).all());

  CHECK_THROWS_AS(mse_loss(Matrix::Zero(2, 2), Matrix::Zero(2, 3)), std::invalid_argument);
}

TEST_CASE("mse_loss gradient against finite differences") {
  RandomSource rng(11);
  const Matrix x = gaussian_matrix(rng, 4, 3, 0, 1);
  Matrix y = gaussian_matrix(rng, 4, 3, 0, 1);
  const Matrix num = numeric_gradient(y, [&] { return mse_loss(x, y).loss; });
  CHECK(rel_err(mse_loss(x, y).grad, num) < 1e-8);
}

TEST_CASE("backward: zero upstream gradient gives zero gradients") {
  RandomSource rng(12);
  AeModel m = make_mlp_ae(rng, 4, {3}, 3, Activation::Relu, init_stack(rng, 3, 2, HeInit{}));
  const Matrix x = gaussian_matrix(rng, 5, 4, 0, 1);
  const ForwardCache c = forward(m, x);
  const Gradients g = backward(m, c, Matrix::Zero(5, 4));
  for (const auto& slot : parameter_slots(m, g)) CHECK(slot.grad->isZero(0.0));
}

TEST_CASE("backward: N=1 stack gradient is (dL/dz_N)^T z") {
  RandomSource rng(13);
  LinearStack s = init_stack(rng, 3, 1, OrthogonalInit{1.0, 1.0});
  AeModel m = make_linear_ae(rng, 4, 3, 0.5, s);
  const Matrix x = gaussian_matrix(rng, 5, 4, 0, 1);
  const ForwardCache c = forward(m, x);
  const LossResult l = mse_loss(x, c.output);
  const Gradients g = backward(m, c, l.grad);
  // dL/dz_N = dL/dX' * W_dec for the bias-free linear decoder.
  const Matrix dz = l.grad * m.decoder.weights[0];
  const Matrix expect = dz.transpose() * c.codes[0];
  CHECK(rel_err(g.bottleneck[0], expect) < 1e-14);
}

TEST_CASE("backward stale cache is a contract violation") {
  RandomSource rng(14);
  AeModel m = make_linear_ae(rng, 4, 3, 0.1, init_stack(rng, 3, 2, HeInit{}));
  const Matrix x = gaussian_matrix(rng, 2, 4, 0, 1);
  const ForwardCache c = forward(m, x);
  const LossResult l = mse_loss(x, c.output);
  OptimizerState opt;
  apply_step(m, backward(m, c, l.grad), opt);
  CHECK_THROWS_AS(backward(m, c, l.grad), std::logic_error);
}

TEST_CASE("backward matches finite differences on tiny instances") {
  RandomSource rng(15);
  const Matrix x4 = gaussian_matrix(rng, 5, 4, 0, 1);

  SUBCASE("linear vanilla") {
    AeModel m = make_linear_ae(rng, 4, 3, 0.5, {});
    CHECK(worst_gradient_error(m, x4) < 1e-6);
  }
  SUBCASE("linear stack, N=2, alpha=1") {
    AeModel m = make_linear_ae(rng, 4, 3, 0.5, init_stack(rng, 3, 2, HeInit{0.0}));
    CHECK(worst_gradient_error(m, x4) < 1e-6);
  }
  SUBCASE("linear stack, N=3, alpha=2.5") {
    AeModel m = make_linear_ae(rng, 4, 3, 0.5, init_stack(rng, 3, 3, OrthogonalInit{0.8, 2.5}));
    CHECK(worst_gradient_error(m, x4) < 1e-6);
  }
  SUBCASE("linear explicit k=2") {
    AeModel m = make_linear_ae(rng, 4, 3, 0.5, make_explicit(rng, 3, 2));
    CHECK(worst_gradient_error(m, x4) < 1e-6);
  }
  SUBCASE("mlp tanh with every bottleneck kind") {
    const Matrix x = gaussian_matrix(rng, 4, 6, 0, 1);
    for (int kind = 0; kind < 3; ++kind) {
      Bottleneck b;
      if (kind == 1) b = init_stack(rng, 4, 3, OrthogonalInit{1.0, 1.7});
      if (kind == 2) b = make_explicit(rng, 4, 2);
      AeModel m = make_mlp_ae(rng, 6, {5, 4}, 4, Activation::Tanh, b);
      CAPTURE(kind);
      CHECK(worst_gradient_error(m, x) < 1e-6);
    }
  }
  SUBCASE("mlp relu with a stack") {
    const Matrix x = gaussian_matrix(rng, 5, 6, 0, 1);
    AeModel m = make_mlp_ae(rng, 6, {5}, 3, Activation::Relu, init_stack(rng, 3, 2, OrthogonalInit{1.0, 1.0}));
    testing::jitter_parameters(m, x, rng);
    CHECK(worst_gradient_error(m, x) < 1e-6);
  }
  SUBCASE("mlp relu with an explicit subnet, jittered") {
    for (int t = 0; t < 10; ++t) {
      const Matrix x = gaussian_matrix(rng, 5, 6, 0, 1);
      AeModel m = make_mlp_ae(rng, 6, {5}, 4, Activation::Relu, make_explicit(rng, 4, 2));
      testing::jitter_parameters(m, x, rng);
      CHECK(worst_gradient_error(m, x) < 1e-6);
    }
  }
}

TEST_CASE("parameter_slots order and groups") {
  RandomSource rng(16);
  AeModel m = make_mlp_ae(rng, 4, {3}, 2, Activation::Relu, make_explicit(rng, 2, 1));
  const Matrix x = gaussian_matrix(rng, 3, 4, 0, 1);
  const ForwardCache c = forward(m, x);
  const Gradients g = backward(m, c, mse_loss(x, c.output).grad);
  const auto slots = parameter_slots(m, g);
  // encoder: 2 weights + 2 biases, bottleneck: down + up, decoder: 2 + 2.
  REQUIRE(slots.size() == 10);
  CHECK(slots[0].group == ParamGroup::Encoder);
  CHECK(slots[4].group == ParamGroup::Bottleneck);
  CHECK(slots[4].value == &std::get<ExplicitSubnet>(m.bottleneck).down);
  CHECK(slots[5].value == &std::get<ExplicitSubnet>(m.bottleneck).up);
  CHECK(slots[6].group == ParamGroup::Decoder);
  for (const auto& s : slots) CHECK(s.value->rows() == s.grad->rows());
}

TEST_CASE("linear AE carries no bias") {
  RandomSource rng(17);
  const AeModel m = make_linear_ae(rng, 6, 3, 0.1, {});
  for (const auto& b : m.encoder.biases) CHECK(b.size() == 0);
  for (const auto& b : m.decoder.biases) CHECK(b.size() == 0);
  CHECK(m.encoder.weights[0].rows() == 3);
  CHECK(m.decoder.weights[0].cols() == 3);
}

TEST_CASE("sgd_step examples") {
  Matrix p = Matrix::Constant(1, 1, 1.0);
  const Matrix g = Matrix::Constant(1, 1, 2.0);
  OptimizerState st;
  st.learning_rate = 0.1;
  ParamSlot slot{&p, &g, ParamGroup::Encoder};
  CHECK_FALSE(sgd_step(std::span(&slot, 1), st).diverged);
  CHECK(p(0, 0) == doctest::Approx(0.8).epsilon(1e-15));

  Matrix q = Matrix::Constant(2, 2, 3.0);
  const Matrix zero = Matrix::Zero(2, 2);
  ParamSlot zslot{&q, &zero, ParamGroup::Bottleneck};
  sgd_step(std::span(&zslot, 1), st);
  CHECK((q.array() == 3.0).all());
  OptimizerState adam;
  adam.kind = OptimizerKind::Adam;
  adam_step(std::span(&zslot, 1), adam);
  CHECK((q.array() == 3.0).all());
}

TEST_CASE("group rates: 1/N on the bottleneck only") {
  OptimizerState st;
  st.learning_rate = 0.03;
  st.bottleneck_scale = 1.0 / 16;
  CHECK(st.group_rate(ParamGroup::Bottleneck) == 0.03 / 16);
  CHECK(st.group_rate(ParamGroup::Encoder) == 0.03);
  CHECK(st.group_rate(ParamGroup::Decoder) == 0.03);
}

TEST_CASE("adam first step has magnitude eta") {
  RandomSource rng(18);
  Matrix p = gaussian_matrix(rng, 3, 3, 0, 1);
  const Matrix start = p;
  Matrix g = gaussian_matrix(rng, 3, 3, 0, 1);
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) += g(i) >= 0 ? 0.1 : -0.1;  // keep |g| >= 0.1
  OptimizerState st;
  st.kind = OptimizerKind::Adam;
  st.learning_rate = 1e-3;
  ParamSlot slot{&p, &g, ParamGroup::Encoder};
  adam_step(std::span(&slot, 1), st);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double step = start(i) - p(i);
    CHECK(std::abs(std::abs(step) - 1e-3) <= 1e-6 * 1e-3);
    CHECK((step > 0) == (g(i) > 0));
  }
  CHECK(st.step == 1);
}

TEST_CASE("adam later steps follow the bias-corrected recursion") {
  Matrix p = Matrix::Constant(1, 1, 0.5);
  Matrix g(1, 1);
  OptimizerState st;
  st.kind = OptimizerKind::Adam;
  st.learning_rate = 0.01;
  double m = 0, v = 0, ref = 0.5;
  const double grads[] = {0.3, -1.2, 0.7, 2.0};
  for (int t = 1; t <= 4; ++t) {
    g(0, 0) = grads[t - 1];
    ParamSlot slot{&p, &g, ParamGroup::Encoder};
    adam_step(std::span(&slot, 1), st);
    m = 0.9 * m + 0.1 * g(0, 0);
    v = 0.999 * v + 0.001 * g(0, 0) * g(0, 0);
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    ref -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p(0, 0) == doctest::Approx(ref).epsilon(1e-14));
  }
}

TEST_CASE("non-finite gradient flags divergence without touching parameters") {
  Matrix p = Matrix::Constant(2, 1, 1.0);
  Matrix g = Matrix::Constant(2, 1, 0.5);
  g(1, 0) = std::nan("");
  Matrix p2 = Matrix::Constant(1, 1, 4.0);
  const Matrix g2 = Matrix::Constant(1, 1, 1.0);
  ParamSlot slots[] = {{&p2, &g2, ParamGroup::Encoder}, {&p, &g, ParamGroup::Decoder}};
  OptimizerState st;
  CHECK(sgd_step(slots, st).diverged);
  CHECK(p2(0, 0) == 4.0);
  CHECK(p(0, 0) == 1.0);
  st.kind = OptimizerKind::Adam;
  CHECK(adam_step(slots, st).diverged);
  CHECK(p2(0, 0) == 4.0);
}

TEST_CASE("make_explicit shapes and range") {
  RandomSource rng(19);
  const ExplicitSubnet e = make_explicit(rng, 6, 2);
  CHECK(e.down.rows() == 2);
  CHECK(e.down.cols() == 6);
  CHECK(e.up.rows() == 6);
  CHECK(e.up.cols() == 2);
  CHECK_THROWS_AS(make_explicit(rng, 6, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_explicit(rng, 6, 7), std::invalid_argument);
}

TEST_CASE("warm_start_from examples") {
  const ExplicitSubnet id = warm_start_from(Matrix::Identity(4, 4), 4);
  CHECK((id.product() - Matrix::Identity(4, 4)).norm() < 1e-12);
  const ExplicitSubnet d = warm_start_from(diag({3, 2, 1}), 2);
  CHECK((d.product() - diag({3, 2, 0})).norm() < 1e-12);
  CHECK_THROWS_AS(warm_start_from(Matrix::Identity(3, 3), 4), std::invalid_argument);
  CHECK_THROWS_AS(warm_start_from(Matrix::Identity(3, 3), 0), std::invalid_argument);
}

TEST_CASE("warm start rank and Eckart-Young optimality") {
  RandomSource rng(20);
  for (Eigen::Index k = 1; k <= 6; ++k) {
    const Matrix w = gaussian_matrix(rng, 6, 6, 0, 1);
    const ExplicitSubnet e = warm_start_from(w, k);
    const Matrix p = e.product();
    CHECK(estimate_rank(singular_values(p), 1e-12) <= static_cast<std::size_t>(k));
    // Residual norm^2 equals the sum of the discarded sigma^2.
    const auto s = singular_values(w);
    double tail = 0.0;
    for (std::size_t i = static_cast<std::size_t>(k); i < s.size(); ++i) tail += s[i] * s[i];
    CHECK((w - p).squaredNorm() == doctest::Approx(tail).epsilon(1e-10).scale(1.0));
  }
}

TEST_CASE("alpha-equivalence under plain GD") {
  RandomSource rng(21);
  const double alpha = 3.0;
  const double eta = 1e-3;
  LinearStack hat = init_stack(rng, 8, 3, OrthogonalInit{1.0, alpha});
  AeModel a = make_linear_ae(rng, 10, 8, 0.3, hat);
  AeModel b = a;
  LinearStack& direct = b.stack();
  for (auto& l : direct.layers) l *= alpha;
  direct.alpha = 1.0;
  CHECK(rel_err(bottleneck_matrix(a), bottleneck_matrix(b)) < 1e-14);

  OptimizerState oa;
  oa.learning_rate = eta;
  oa.bottleneck_scale = 1.0;
  OptimizerState ob = oa;
  ob.bottleneck_scale = alpha * alpha;
  const Matrix x = gaussian_matrix(rng, 12, 10, 0, 1);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    for (auto* pair : {&a, &b}) {
      const ForwardCache c = forward(*pair, x);
      const Gradients g = backward(*pair, c, mse_loss(x, c.output).grad);
      apply_step(*pair, g, pair == &a ? oa : ob);
    }
    worst = std::max(worst, rel_err(bottleneck_matrix(a), bottleneck_matrix(b)));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("tiny GD step does not increase the loss") {
  RandomSource rng(22);
  for (int trial = 0; trial < 5; ++trial) {
    AeModel m = make_linear_ae(rng, 6, 4, 0.3, init_stack(rng, 4, 3, OrthogonalInit{0.5, 1.0}));
    const Matrix x = gaussian_matrix(rng, 8, 6, 0, 1);
    OptimizerState opt;
    opt.learning_rate = 1e-4;
    for (int t = 0; t < 20; ++t) {
      const ForwardCache c = forward(m, x);
      const LossResult l = mse_loss(x, c.output);
      apply_step(m, backward(m, c, l.grad), opt);
      CHECK(loss_of(m, x) <= l.loss);
    }
  }
}

TEST_CASE("parse and print helpers") {
  CHECK(parse_activation("relu") == Activation::Relu);
  CHECK(parse_activation("tanh") == Activation::Tanh);
  CHECK_THROWS_AS(parse_activation("gelu"), std::invalid_argument);
  CHECK(parse_optimizer("gd") == OptimizerKind::Gd);
  CHECK(parse_optimizer("adam") == OptimizerKind::Adam);
  CHECK_THROWS_AS(parse_optimizer("lbfgs"), std::invalid_argument);
}

}  // TEST_SUITE
