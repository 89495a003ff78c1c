#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "qmlp/error.hpp"
#include "qmlp/hwsim.hpp"

using namespace qmlp;

namespace {

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

TEST_CASE("stage cost constants") {
  const auto p = stage_cost_model(DesignKind::pipelined_linear);
  CHECK(p.cycles_per_element == 1);
  CHECK(p.per_row == 5);
  CHECK(p.per_layer == 3);
  const auto f = stage_cost_model(DesignKind::fixed_baseline);
  CHECK(f.cycles_per_element == 2);
  CHECK(f.per_row == 2);
  CHECK(f.per_layer == 1);
  CHECK(p.layer_cycles(1, 1) == (1 + 5) + 3);
  CHECK(f.layer_cycles(1, 1) == (2 + 2) + 1);
}

TEST_CASE("cycle estimates reproduce the measured latencies") {
  const std::size_t sizes[] = {10, 30, 60, 120};
  const double pipelined_us[] = {1.01, 2.81, 5.51, 10.91};
  const double fixed_us[] = {1.04, 3.04, 6.04, 12.04};
  for (int i = 0; i < 4; ++i) {
    const auto h = sizes[i];
    CHECK(estimate_cycles(h, 3, DesignKind::pipelined_linear) == 9 * h + 11);
    CHECK(estimate_cycles(h, 3, DesignKind::fixed_baseline) == 10 * h + 4);
    CHECK(latency(estimate_cycles(h, 3, DesignKind::pipelined_linear), 100e6) * 1e6 ==
          doctest::Approx(pipelined_us[i]).epsilon(1e-12));
    CHECK(latency(estimate_cycles(h, 3, DesignKind::fixed_baseline), 100e6) * 1e6 ==
          doctest::Approx(fixed_us[i]).epsilon(1e-12));
  }
  CHECK(estimate_cycles(10, 3, DesignKind::pipelined_linear) == 101);
  CHECK(estimate_cycles(120, 3, DesignKind::pipelined_linear) == 1091);
  CHECK(estimate_cycles(60, 3, DesignKind::fixed_baseline) == 604);
  for (std::size_t h = 1; h < 300; ++h) CHECK(estimate_cycles(h, 3, DesignKind::pipelined_linear) == 9 * h + 11);
  CHECK_THROWS_AS(estimate_cycles(0, 3, DesignKind::pipelined_linear), Error);
}

TEST_CASE("latency and energy arithmetic") {
  CHECK(latency(101, 100e6) == doctest::Approx(1.01e-6).epsilon(1e-12));
  CHECK(latency(0, 100e6) == 0.0);
  CHECK(latency(100, 50e6) == doctest::Approx(2e-6).epsilon(1e-12));
  CHECK(latency(200, 50e6) == 2 * latency(100, 50e6));
  CHECK_THROWS_AS(latency(10, 0.0), Error);

  CHECK(round2(energy(28e-3, 1.04e-6) * 1e6) == 0.03);
  CHECK(energy(28e-3, 1.04e-6) * 1e6 == doctest::Approx(0.02912).epsilon(1e-9));
  CHECK(round2(energy(34e-3, 10.91e-6) * 1e6) == 0.37);
  CHECK(energy(0.0, 5e-6) == 0.0);
  CHECK(energy(2.0, 3.0) == 2 * energy(1.0, 3.0));
  CHECK_THROWS_AS(energy(-1.0, 1.0), Error);
}

TEST_CASE("default power table energy column") {
  const auto table = PowerTable::defaults();
  const std::size_t sizes[] = {10, 30, 60, 120};
  const double pipelined_uj[] = {0.03, 0.09, 0.18, 0.37};
  const double fixed_uj[] = {0.03, 0.09, 0.18, 0.35};
  const double pipelined_mw[] = {31, 32, 33, 34};
  for (int i = 0; i < 4; ++i) {
    const auto p = cycle_report(sizes[i], 3, DesignKind::pipelined_linear, table);
    CHECK(round2(p.energy_j * 1e6) == pipelined_uj[i]);
    CHECK(p.power_w * 1e3 == doctest::Approx(pipelined_mw[i]));
    CHECK(p.layer_cycles.size() == 2);
    CHECK(p.layer_cycles[0] + p.layer_cycles[1] == p.total_cycles);
    const auto f = cycle_report(sizes[i], 3, DesignKind::fixed_baseline, table);
    CHECK(round2(f.energy_j * 1e6) == fixed_uj[i]);
  }
  CHECK_THROWS_AS(cycle_report(11, 3, DesignKind::pipelined_linear, table), Error);
  PowerTable custom;
  custom.set(DesignKind::fixed_baseline, 11, 0.02);
  CHECK(cycle_report(11, 3, DesignKind::fixed_baseline, custom).total_cycles == 10 * 11 + 4);
}

TEST_CASE("trace reproduces the hand-evaluated layer") {
  QuantizedLinearLayer l;
  l.rows = 1;
  l.cols = 2;
  l.weights = {4, 2};
  l.weight_zero = 1;
  l.bias = {5};
  l.requant = approximate_multiplier(0.5);
  const std::vector<std::int8_t> x{10, -3};
  for (const auto d : {DesignKind::pipelined_linear, DesignKind::fixed_baseline}) {
    const auto t = simulate_trace(l, x, d);
    CHECK(t.outputs == std::vector<std::int8_t>{16});
    CHECK(t.outputs == int_linear(l, x));
    CHECK(t.cycles == stage_cost_model(d).layer_cycles(1, 2));
  }
}

TEST_CASE("trace equals int_linear and the stage model on random layers") {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> i8(-128, 127);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t rows = 1 + rng() % 16;
    const std::size_t cols = 1 + rng() % 16;
    const auto l = oracle::random_layer(rng, rows, cols);
    std::vector<std::int8_t> x(cols);
    for (auto& v : x) v = static_cast<std::int8_t>(i8(rng));
    const auto d = trial % 2 ? DesignKind::pipelined_linear : DesignKind::fixed_baseline;
    const auto t = simulate_trace(l, x, d);
    REQUIRE(t.outputs == int_linear(l, x));
    REQUIRE(t.cycles == stage_cost_model(d).layer_cycles(rows, cols));
  }
}

TEST_CASE("model trace cycles equal the estimate") {
  std::mt19937_64 rng(42);
  for (const std::size_t h : {10u, 30u, 60u, 120u}) {
    const auto q = oracle::random_frozen_qat(rng, 3, h, SchemePair::parse("L/L"));
    const auto im = convert(q);
    const std::vector<std::int8_t> x{-100, 0, 90};
    for (const auto d : {DesignKind::pipelined_linear, DesignKind::fixed_baseline}) {
      const auto t = simulate_model_trace(im, x, d);
      CHECK(t.cycles == estimate_cycles(h, 3, d));
      REQUIRE(t.outputs.size() == 1);
      CHECK(t.outputs[0] == int_forward_codes(im, x));
    }
  }
}

TEST_CASE("trace raises accumulator overflow") {
  QuantizedLinearLayer l;
  l.rows = 1;
  l.cols = 2;
  l.weights = {127, 127};
  l.weight_zero = -128;
  l.input_zero = -128;
  l.bias = {2147483647 - 100};
  l.requant = approximate_multiplier(1e-6);
  try {
    simulate_trace(l, std::vector<std::int8_t>{127, 127});
    FAIL("expected overflow");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::overflow);
  }
  CHECK_THROWS_AS(simulate_trace(l, std::vector<std::int8_t>{1}), Error);
}

TEST_CASE("design names") {
  CHECK(parse_design("pipelined-linear") == DesignKind::pipelined_linear);
  CHECK(parse_design("fixed-baseline") == DesignKind::fixed_baseline);
  CHECK(std::string(to_string(DesignKind::fixed_baseline)) == "fixed-baseline");
  CHECK_THROWS_AS(parse_design("systolic"), Error);
}
