#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "qmlp/error.hpp"
#include "qmlp/int_infer.hpp"

using namespace qmlp;

namespace {

QuantizedLinearLayer hand_layer() {
  QuantizedLinearLayer l;
  l.rows = 1;
  l.cols = 2;
  l.weights = {4, 2};
  l.weight_zero = 1;
  l.bias = {5};
  l.input_zero = 0;
  l.output_zero = 0;
  l.requant = approximate_multiplier(0.5);
  return l;
}

}  // namespace

TEST_CASE("hand-evaluated integer layer") {
  const auto l = hand_layer();
  REQUIRE(l.requant.m0 == 1073741824u);
  REQUIRE(l.requant.shift == 31);
  // acc = 3*10 + 1*(-3) + 5 = 32; 32 * 0.5 = 16
  const std::vector<std::int8_t> x{10, -3};
  CHECK(int_linear(l, x) == std::vector<std::int8_t>{16});
}

TEST_CASE("integer layer special cases") {
  QuantizedLinearLayer zero;
  zero.rows = 3;
  zero.cols = 2;
  zero.weights.assign(6, 0);
  zero.bias.assign(3, 0);
  zero.output_zero = -7;
  zero.requant = approximate_multiplier(0.3);
  CHECK(int_linear(zero, std::vector<std::int8_t>{100, -100}) == std::vector<std::int8_t>{-7, -7, -7});

  auto unit = hand_layer();
  unit.requant = approximate_multiplier(1.0);
  unit.output_zero = 3;
  CHECK(unit.requant.m0 == 1073741824u);
  CHECK(unit.requant.shift == 30);
  CHECK(int_linear(unit, std::vector<std::int8_t>{2, 1}) == std::vector<std::int8_t>{6 + 1 + 5 + 3});

  CHECK_THROWS_AS(int_linear(unit, std::vector<std::int8_t>{1}), Error);
}

TEST_CASE("requantize rounds to nearest") {
  const auto half = approximate_multiplier(0.5);
  CHECK(requantize(3, half) == 2);
  CHECK(requantize(-3, half) == -1);
  CHECK(requantize(5, half) == 3);
  CHECK(requantize(4, half) == 2);
  CHECK(requantize(-4, half) == -2);
  const auto quarter = approximate_multiplier(0.25);
  CHECK(requantize(5, quarter) == 1);
  CHECK(requantize(7, quarter) == 2);
  CHECK(requantize(-5, quarter) == -1);
  CHECK(requantize(-7, quarter) == -2);
}

TEST_CASE("accumulator overflow is an error") {
  QuantizedLinearLayer l;
  l.rows = 1;
  l.cols = 2;
  l.weights = {127, 127};
  l.weight_zero = -128;
  l.bias = {2147483647 - 100};
  l.input_zero = -128;
  l.requant = approximate_multiplier(1e-6);
  try {
    int_linear(l, std::vector<std::int8_t>{127, 127});
    FAIL("expected overflow");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::overflow);
  }
}

TEST_CASE("integer ReLU") {
  const std::int32_t z = -20;
  CHECK(int_relu(std::vector<std::int8_t>{-25}, z)[0] == z);
  CHECK(int_relu(std::vector<std::int8_t>{-20}, z)[0] == z);
  CHECK(int_relu(std::vector<std::int8_t>{-13}, z)[0] == -13);

  const auto p = QuantParams::make(0.05, z, 8);
  for (int a = -128; a <= 127; ++a) {
    const auto out = int_relu(std::vector<std::int8_t>{static_cast<std::int8_t>(a)}, z)[0];
    CHECK(dequantize(out, p) == std::max(0.0, dequantize(a, p)));
  }
}

TEST_CASE("integer layer matches an independent reference") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> i8(-128, 127);
  for (int trial = 0; trial < 500; ++trial) {
    const auto l = oracle::random_layer(rng, 1 + rng() % 12, 1 + rng() % 12);
    std::vector<std::int8_t> x(l.cols);
    for (auto& v : x) v = static_cast<std::int8_t>(i8(rng));
    REQUIRE(int_linear(l, x) == oracle::int_linear_ref(l, x));
  }
}

TEST_CASE("convert a hand-built 2-2-1 model on a 0.25 grid") {
  auto m = MlpModel::zeros(2, 2);
  m.w1(0, 0) = 0.3;
  m.w1(0, 1) = -0.6;
  m.w1(1, 0) = 0.9;
  m.w1(1, 1) = 0.2;
  m.b1 = {0.1, -0.4};
  m.w2 = {0.7, -0.4};
  m.b2[0] = 0.6;
  const QuantScheme quarter = QuantScheme::fixed(2, 8);
  QatModel q(m, {quarter, quarter});
  q.freeze();
  const auto im = convert(q);

  CHECK(im.hidden.weights == std::vector<std::int8_t>{1, -2, 4, 1});
  CHECK(im.hidden.bias == std::vector<std::int32_t>{0, -8});
  CHECK(im.output.weights == std::vector<std::int8_t>{3, -2});
  CHECK(im.output.bias == std::vector<std::int32_t>{8});
  CHECK(im.hidden.requant.m0 == 1073741824u);
  CHECK(im.hidden.requant.shift == 32);
  // x_q = (2, 5); acc = (2 - 10, 8 + 5 - 8) = (-8, 5) -> (-2, 1) -> relu (0, 1)
  // output acc = 0 - 2 + 8 = 6 -> 1.5 -> 2
  const auto out = int_forward(im, std::vector<double>{0.6, 1.3});
  CHECK(out.y_q == 2);
  CHECK(out.y == 0.5);
  CHECK(out.y == qat_forward(q, std::vector<double>{0.6, 1.3}));
}

TEST_CASE("unit scales give an identity multiplier") {
  CHECK(approximate_multiplier(1.0 * 1.0 / 1.0) == RequantMultiplier{1.0, 1073741824u, 30});
}

TEST_CASE("convert structure for an (L,L) model") {
  std::mt19937_64 rng(32);
  const auto q = oracle::random_frozen_qat(rng, 3, 10, SchemePair::parse("L/L"));
  const auto im = convert(q);
  CHECK(im.hidden.rows == 10);
  CHECK(im.hidden.cols == 3);
  CHECK(im.output.rows == 1);
  CHECK(im.output.cols == 10);
  CHECK(im.hidden.output_zero == im.relu_zero);
  CHECK(im.output.input_zero == im.relu_zero);
  CHECK(im.relu_zero == q.table().params(QuantObject::a1).zero_point);
  CHECK_NOTHROW(im.validate());

  QatModel unfrozen(init_model(3, 4, 1), SchemePair::parse("F/F"));
  CHECK_THROWS_AS(convert(unfrozen), Error);
}

TEST_CASE("grid-exact weights dequantize back exactly") {
  auto m = MlpModel::zeros(2, 2);
  m.w1(0, 0) = 0.5;
  m.w1(0, 1) = -0.25;
  m.w1(1, 0) = 1.0;
  m.w1(1, 1) = 0.015625;
  m.w2 = {0.75, -1.5};
  QatModel q(m, SchemePair::parse("F/F"));
  q.freeze();
  const auto im = convert(q);
  const auto& pw = q.table().params(QuantObject::w1);
  for (std::size_t i = 0; i < 4; ++i) CHECK(dequantize(im.hidden.weights[i], pw) == m.w1.flat()[i]);
}

TEST_CASE("all-zero network outputs the output zero point") {
  QatModel q(MlpModel::zeros(3, 4), SchemePair::parse("L/L"));
  std::mt19937_64 rng(33);
  const auto ds = oracle::random_dataset(rng, 8, 3);
  q.observe(Batch(ds));
  q.freeze();
  const auto im = convert(q);
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    const auto out = int_forward(im, ds.inputs.row(r));
    CHECK(out.y_q == im.output_params.zero_point);
    CHECK(out.y == 0.0);
  }
}

TEST_CASE("integer inference tracks fake-quant within one output step") {
  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t sizes[] = {10, 30, 60, 120};
  int agree = 0;
  const int trials = 2000;
  for (int i = 0; i < trials; ++i) {
    const auto q = oracle::random_frozen_qat(rng, 3, sizes[i % 4], SchemePair::parse(i % 2 ? "L/L" : "F/F"));
    const auto im = convert(q);
    const std::vector<double> x{u(rng), u(rng), u(rng)};
    const double s_y = im.output_params.scale;
    if (std::abs(int_forward(im, x).y - qat_forward(q, x)) <= s_y * (1 + 1e-9)) ++agree;
  }
  CHECK(static_cast<double>(agree) / trials >= 0.999);
}

TEST_CASE("raw predictions apply the packaged normalization") {
  std::mt19937_64 rng(35);
  const auto q = oracle::random_frozen_qat(rng, 2, 5, SchemePair::parse("L/L"));
  NormStats norm;
  norm.inputs = {{10.0, 20.0}, {-1.0, 1.0}};
  norm.target = {4.0, 36.0};
  const auto im = convert(q, norm);
  Matrix<double> raw(2, 2, std::vector<double>{15.0, 0.0, 10.0, 1.0});
  const auto pred = int_predict_raw(im, raw);
  REQUIRE(pred.size() == 2);
  CHECK(pred[0] == denormalize_value(int_forward(im, std::vector<double>{0.5, 0.5}).y, norm.target));
  CHECK(pred[1] == denormalize_value(int_forward(im, std::vector<double>{0.0, 1.0}).y, norm.target));

  try {
    int_forward(im, std::vector<double>{1.0, 2.0, 3.0});
    FAIL("expected dimension mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::dimension_mismatch);
    CHECK(std::string(e.what()).find("D=2") != std::string::npos);
  }
}
