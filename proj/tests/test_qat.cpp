#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "qmlp/error.hpp"
#include "qmlp/qat.hpp"

using namespace qmlp;

namespace {

MlpModel hand_model() {
  auto m = MlpModel::zeros(2, 2);
  m.w1(0, 0) = 0.3;
  m.w1(0, 1) = -0.6;
  m.w1(1, 0) = 0.9;
  m.w1(1, 1) = 0.2;
  m.b1 = {0.1, -0.4};
  m.w2 = {0.7, -0.4};
  m.b2[0] = 0.6;
  return m;
}

SchemePair quarter_grid() { return {QuantScheme::fixed(2, 8), QuantScheme::fixed(2, 8)}; }

}  // namespace

TEST_CASE("fake_quant") {
  const auto p = QuantParams::make(0.25, 0, 8);
  CHECK(fake_quant(0.4, p) == 0.5);
  CHECK(fake_quant(0.75, p) == 0.75);
  CHECK(fake_quant(-0.375, p) == -0.5);
  const auto a = affine_params(-1.0, 1.0, 8);
  CHECK(fake_quant(5.0, a) == dequantize(a.q_max, a));
  CHECK(fake_quant(-5.0, a) == dequantize(a.q_min, a));
  const std::vector<double> v{0.1, 0.4, -2.0};
  const auto fq = fake_quant(v, p);
  CHECK(fq == std::vector<double>{0.0, 0.5, -2.0});
}

TEST_CASE("straight-through estimator") {
  const auto p = affine_params(0.0, 1.0, 8);
  const std::vector<double> x{0.5, 1.5, -0.2, 0.0, 1.0};
  const std::vector<double> g{0.7, 0.7, 0.7, 0.3, -0.4};
  const auto out = ste_backward(g, x, p);
  CHECK(out[0] == 0.7);
  CHECK(out[1] == 0.0);
  CHECK(out[2] == 0.0);
  CHECK(out[3] == 0.3);
  CHECK(out[4] == -0.4);

  const std::vector<double> inside{0.1, 0.2, 0.9};
  const std::vector<double> grads{1.5, -2.0, 0.25};
  CHECK(ste_backward(grads, inside, p) == grads);

  const auto fx = fixed_point_params({6, 8});
  CHECK(ste_pass(1.98, fx));
  CHECK_FALSE(ste_pass(2.1, fx));
  CHECK(ste_pass(-2.0, fx));
  CHECK_FALSE(ste_pass(-2.02, fx));
  CHECK(ste_pass(127.0 / 64, fx));
  CHECK_FALSE(ste_pass(127.0 / 64 + 1e-9, fx));
  CHECK_FALSE(ste_pass(-2.0 - 1e-9, fx));
}

TEST_CASE("scheme pairs") {
  CHECK(SchemePair::parse("L/F").label() == "L/F");
  CHECK(SchemePair::parse("F/L").hidden.kind == SchemeKind::fixed_point);
  CHECK(SchemePair::parse("F/L").output.kind == SchemeKind::affine);
  CHECK_THROWS_AS(SchemePair::parse("X/L"), Error);
  CHECK_THROWS_AS(SchemePair::parse("LL"), Error);

  for (const char* label : {"L/L", "L/F", "F/L", "F/F"}) {
    const auto schemes = SchemePair::parse(label);
    QatModel m(init_model(3, 4, 1), schemes);
    std::mt19937_64 rng(2);
    const auto ds = oracle::random_dataset(rng, 8, 3);
    m.observe(Batch(ds));
    m.freeze();
    const auto& t = m.table();
    CHECK(t.at(QuantObject::x).scheme == schemes.hidden);
    CHECK(t.at(QuantObject::w1).scheme == schemes.hidden);
    CHECK(t.at(QuantObject::b1).scheme == schemes.hidden);
    CHECK(t.at(QuantObject::a1).scheme == schemes.hidden);
    CHECK(t.at(QuantObject::w2).scheme == schemes.output);
    CHECK(t.at(QuantObject::y).scheme == schemes.output);
  }
}

TEST_CASE("A2 resolves to the A1 entry") {
  QuantObjectTable t(SchemePair::parse("L/L"));
  t.at(QuantObject::a1).params = QuantParams::make(0.125, -3, 8);
  CHECK(&t.at(QuantObject::a2) == &t.at(QuantObject::a1));
  CHECK(t.params(QuantObject::a2).zero_point == -3);
}

TEST_CASE("(F,F) forces Z = 0 and S = 2^-6 everywhere") {
  std::mt19937_64 rng(3);
  const auto q = oracle::random_frozen_qat(rng, 3, 10, SchemePair::parse("F/F"));
  for (const auto obj : {QuantObject::x, QuantObject::w1, QuantObject::b1, QuantObject::a1, QuantObject::a2,
                         QuantObject::w2, QuantObject::b2, QuantObject::y}) {
    CHECK(q.table().params(obj).zero_point == 0);
    CHECK(q.table().params(obj).scale == 0.015625);
  }
}

TEST_CASE("(L,L) carries affine parameters with nonzero zero points") {
  std::mt19937_64 rng(4);
  const auto q = oracle::random_frozen_qat(rng, 3, 10, SchemePair::parse("L/L"));
  const auto& t = q.table();
  // Inputs in [0, 1] put Z_X at the bottom of the range.
  CHECK(t.params(QuantObject::x).zero_point == -128);
  CHECK(t.params(QuantObject::w1).zero_point != 0);
  CHECK(t.params(QuantObject::b1).zero_point == 0);
  CHECK(t.params(QuantObject::x).scale != 0.015625);
}

TEST_CASE("hand-evaluated fake-quant chain on a 0.25 grid") {
  QatModel q(hand_model(), quarter_grid());
  q.freeze();
  // x -> (0.5, 1.25); W1 -> [[0.25, -0.5], [1.0, 0.25]]; B1 -> (0, -0.5)
  // z = (-0.5, 0.3125) -> fq (-0.5, 0.25) -> relu (0, 0.25)
  // W2 -> (0.75, -0.5); B2 -> 0.5; y = 0.5 - 0.125 = 0.375 -> 1.5 steps -> 2 -> 0.5
  CHECK(qat_forward(q, std::vector<double>{0.6, 1.3}) == 0.5);
}

TEST_CASE("grid-exact weights and inputs reproduce the float forward") {
  auto m = MlpModel::zeros(2, 3);
  const double w1[] = {0.5, -0.25, 0.75, 0.5, -1.0, 0.25};
  std::copy(std::begin(w1), std::end(w1), m.w1.flat().begin());
  m.b1 = {0.125, -0.5, 0.25};
  m.w2 = {0.5, 0.25, -0.5};
  m.b2[0] = 0.0625;
  QatModel q(m, SchemePair::parse("F/F"));
  q.freeze();
  for (const auto& x : {std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 1.0},
                        std::vector<double>{-1.0, 0.0}}) {
    CHECK(qat_forward(q, x) == forward(m, x));
  }
}

TEST_CASE("very wide grids approach the float network") {
  std::mt19937_64 rng(5);
  const auto wide = QuantScheme::fixed(24, 32);
  for (int i = 0; i < 20; ++i) {
    const auto m = init_model(3, 8, rng());
    QatModel q(m, {wide, wide});
    q.freeze();
    const auto ds = oracle::random_dataset(rng, 5, 3);
    for (std::size_t r = 0; r < ds.rows(); ++r) {
      CHECK(std::abs(qat_forward(q, ds.inputs.row(r)) - forward(m, ds.inputs.row(r))) < 1e-6);
    }
  }
}

TEST_CASE("observers move in training mode only") {
  std::mt19937_64 rng(6);
  const auto ds = oracle::random_dataset(rng, 12, 3);
  QatModel q(init_model(3, 5, 1), SchemePair::parse("L/L"));
  CHECK_FALSE(q.table().at(QuantObject::x).observer.initialized);
  MlpModel grad = MlpModel::zeros(3, 5);
  q.loss_and_gradient(Batch(ds), grad);
  const auto after_train = q.table();
  CHECK(after_train.at(QuantObject::x).observer.initialized);
  CHECK(after_train.at(QuantObject::a1).observer.initialized);
  CHECK(after_train.at(QuantObject::y).observer.initialized);

  (void)q.forward(ds.inputs.row(0));
  (void)q.loss(ds);
  CHECK(q.table() == after_train);

  const auto other = oracle::random_dataset(rng, 12, 3);
  q.observe(Batch(other));
  CHECK_FALSE(q.table() == after_train);
}

TEST_CASE("straight-through gradients on a very wide grid equal the float gradients") {
  // Weights move by at most 2^-25 when snapped, so the gradients agree to
  // that order; both are also checked against finite differences.
  std::mt19937_64 rng(7);
  const auto wide = QuantScheme::fixed(24, 32);
  int trials = 0;
  while (trials < 20) {
    const auto ds = oracle::random_dataset(rng, 6, 2);
    const auto m = oracle::random_model(rng, 2, 3);
    if (oracle::near_kink(m, ds, 1e-3)) continue;
    QatModel q(m, {wide, wide});
    MlpModel grad = MlpModel::zeros(2, 3);
    q.loss_and_gradient(Batch(ds), grad);
    const auto exact = backward(m, Batch(ds)).grad;
    const auto a = grad.tensors();
    const auto b = exact.tensors();
    for (std::size_t t = 0; t < a.size(); ++t) {
      for (std::size_t i = 0; i < a[t].size(); ++i) CHECK(std::abs(a[t][i] - b[t][i]) < 1e-5);
    }
    CHECK(oracle::finite_difference(m, ds, exact).max_rel_error < 1e-4);
    ++trials;
  }
}

TEST_CASE("qat_train returns a frozen best-validation model") {
  std::mt19937_64 rng(8);
  auto train_set = oracle::random_dataset(rng, 80, 2);
  for (std::size_t r = 0; r < train_set.rows(); ++r) {
    train_set.targets[r] = 0.5 * train_set.inputs(r, 0) + 0.25;
  }
  const Dataset val_set = train_set.slice(0, 20);
  TrainConfig cfg;
  cfg.max_epochs = 12;
  cfg.seed = 9;
  const auto res = qat_train(train_set, val_set, 6, SchemePair::parse("L/L"), cfg);
  CHECK(res.model.frozen());
  const double best = res.model.loss(val_set);
  for (const double v : res.history.validation_loss) CHECK(best <= v + 1e-15);

  const auto again = qat_train(train_set, val_set, 6, SchemePair::parse("L/L"), cfg);
  CHECK(again.model.weights() == res.model.weights());
  CHECK(again.model.table() == res.model.table());
}
