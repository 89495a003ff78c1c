#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "qmlp/error.hpp"
#include "qmlp/harness.hpp"
#include "qmlp/package.hpp"

using namespace qmlp;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.synthetic = {.samples = 400, .trend = Trend::upward_downward, .noise_std = 0.01, .sensors = 3, .seed = 1};
  cfg.hidden_sizes = {10};
  cfg.folds = 2;
  cfg.runs_per_fold = 1;
  cfg.master_seed = 5;
  cfg.train.max_epochs = 4;
  cfg.train.batch_size = 16;
  return cfg;
}

RunRecord record(const std::string& variant, std::size_t hidden, double mse) {
  RunRecord r;
  r.variant = variant;
  r.hidden = hidden;
  r.schemes = variant == "M-Fixed" ? "F/F" : variant == "M-Linear" ? "L/L" : "";
  r.test_mse = mse;
  return r;
}

}  // namespace

TEST_CASE("config parsing fills defaults and rejects unknown keys") {
  const auto cfg = parse_config(R"({"dataset": {"synthetic": {"samples": 4000, "trend": "upward-downward"}},
                                    "hidden_sizes": [10, 120], "variants": ["M-Linear"], "master_seed": 9,
                                    "train": {"max_epochs": 7}, "power_mw": {"fixed-baseline": {"10": 30}}})");
  CHECK(cfg.synthetic.samples == 4000);
  CHECK(cfg.synthetic.trend == Trend::upward_downward);
  CHECK(cfg.hidden_sizes == std::vector<std::size_t>{10, 120});
  CHECK(cfg.variants == std::vector<Variant>{Variant::m_linear});
  CHECK(cfg.folds == 7);
  CHECK(cfg.runs_per_fold == 3);
  CHECK(cfg.train.max_epochs == 7);
  CHECK(cfg.train.beta2 == 0.98);
  CHECK(*cfg.power.lookup(DesignKind::fixed_baseline, 10) == doctest::Approx(0.030));
  CHECK(*cfg.power.lookup(DesignKind::pipelined_linear, 10) == doctest::Approx(0.031));

  CHECK_THROWS_AS(parse_config(R"({"hiden_sizes": [10]})"), Error);
  CHECK_THROWS_AS(parse_config(R"({"variants": []})"), Error);
  CHECK_THROWS_AS(parse_config(R"({"variants": ["M-Half"]})"), Error);
  CHECK_THROWS_AS(parse_config(R"({"runs_per_fold": 0})"), Error);
  CHECK_THROWS_AS(parse_config(R"({"hidden_sizes": []})"), Error);
  CHECK_THROWS_AS(parse_config(R"({"folds": "seven"})"), Error);
  CHECK_THROWS_AS(parse_config("{not json"), Error);
}

TEST_CASE("config hash follows result-relevant fields only") {
  auto a = tiny_config();
  auto b = tiny_config();
  b.threads = 4;
  b.output_root = "elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.master_seed = 6;
  CHECK(config_hash(a) != config_hash(b));
  CHECK(run_directory(a).filename().string() == "run-" + config_hash(a));
  CHECK(parse_config(canonical_config(a)).master_seed == 5);
}

TEST_CASE("run seeds are distinct per cell and stable") {
  std::set<std::uint64_t> seen;
  for (int f = 0; f < 7; ++f) {
    for (int r = 0; r < 3; ++r) {
      for (const char* v : {"M-Float", "M-Fixed", "M-Linear"}) {
        for (const std::size_t h : {10u, 30u, 60u, 120u}) seen.insert(derive_run_seed(1, f, r, v, h));
      }
    }
  }
  CHECK(seen.size() == 7 * 3 * 3 * 4);
  CHECK(derive_run_seed(1, 2, 0, "M-Fixed", 10) == derive_run_seed(1, 2, 0, "M-Fixed", 10));
  CHECK(derive_run_seed(1, 2, 0, "M-Fixed", 10) != derive_run_seed(2, 2, 0, "M-Fixed", 10));
}

TEST_CASE("single float cell gives a single record") {
  auto cfg = tiny_config();
  cfg.variants = {Variant::m_float};
  cfg.folds = 1;
  const auto ds = load_dataset(cfg);
  const auto records = run_sweep(cfg, ds);
  REQUIRE(records.size() == 1);
  CHECK(records[0].variant == "M-Float");
  CHECK(std::isfinite(records[0].test_mse));
  CHECK(records[0].epochs >= 1);
}

TEST_CASE("sweep records carry quantization fields only for quantized variants") {
  auto cfg = tiny_config();
  const auto ds = load_dataset(cfg);
  const auto pkg_dir = std::filesystem::temp_directory_path() / "qmlp_harness_pkgs";
  std::filesystem::remove_all(pkg_dir);
  std::filesystem::create_directories(pkg_dir);
  const auto records = run_sweep(cfg, ds, &pkg_dir);
  REQUIRE(records.size() == 2 * 1 * 3 * 1);
  for (const auto& r : records) {
    CHECK(r.status == "ok");
    CHECK(std::isfinite(r.test_mse));
    if (r.variant == "M-Float") {
      CHECK(r.schemes.empty());
      CHECK_FALSE(r.agreement.has_value());
      CHECK_FALSE(r.cycles.has_value());
      CHECK_FALSE(r.energy_uj.has_value());
    } else {
      CHECK(r.agreement.has_value());
      CHECK(*r.agreement >= 0.9);
      CHECK(r.cycles.has_value());
      CHECK(*r.design == (r.variant == "M-Fixed" ? "fixed-baseline" : "pipelined-linear"));
      CHECK(*r.cycles == (r.variant == "M-Fixed" ? 104u : 101u));
    }
  }
  std::size_t packages = 0;
  for (const auto& entry : std::filesystem::directory_iterator(pkg_dir)) {
    CHECK_NOTHROW(load_package(entry.path()));
    ++packages;
  }
  CHECK(packages == 4);
  std::filesystem::remove_all(pkg_dir);
}

TEST_CASE("cells give identical records in any order and on any thread count") {
  auto cfg = tiny_config();
  cfg.hidden_sizes = {10, 30};
  const auto ds = load_dataset(cfg);
  const auto folds = prepare_folds(ds, cfg.folds);
  auto cells = sweep_cells(cfg);
  const auto forward = run_cells(cells, folds, cfg);

  std::vector<CellSpec> reversed(cells.rbegin(), cells.rend());
  auto cfg2 = cfg;
  cfg2.threads = 3;
  auto backward = run_cells(reversed, folds, cfg2);
  std::reverse(backward.begin(), backward.end());
  CHECK(records_to_csv(forward) == records_to_csv(backward));
}

TEST_CASE("ablation grid has four scheme pairs per size") {
  auto cfg = tiny_config();
  cfg.hidden_sizes = {10, 30, 60, 120};
  const auto cells = ablation_cells(cfg);
  CHECK(cells.size() == 4 * 4);
  for (const std::size_t h : {10u, 30u, 60u, 120u}) {
    std::set<std::string> labels;
    for (const auto& c : cells) {
      if (c.hidden == h) labels.insert(c.schemes->label());
    }
    CHECK(labels == std::set<std::string>{"L/L", "L/F", "F/L", "F/F"});
  }
  for (const auto& c : cells) CHECK(c.fold == 0);

  cfg.hidden_sizes = {10};
  cfg.train.max_epochs = 2;
  const auto ds = load_dataset(cfg);
  const auto grid = run_ablation(cfg, ds);
  REQUIRE(grid.size() == 4);
  const auto json = ablation_to_json(summarize(grid));
  CHECK(json.find("\"hidden_layer\": \"L\"") != std::string::npos);
  CHECK(json.find("\"output_layer\": \"F\"") != std::string::npos);
}

TEST_CASE("records CSV round trip") {
  auto cfg = tiny_config();
  const auto ds = load_dataset(cfg);
  const auto records = run_sweep(cfg, ds);
  const auto text = records_to_csv(records);
  CHECK(records_from_csv(text) == records);
  CHECK(records_to_csv(records_from_csv(text)) == text);
  CHECK_THROWS_AS(records_from_csv("nonsense\n"), Error);
  CHECK_THROWS_AS(records_from_csv(""), Error);
}

TEST_CASE("percent reduction") {
  CHECK(percent_reduction(82.72, 74.70) == 9.70);
  CHECK(percent_reduction(5.0, 5.0) == 0.0);
  CHECK(percent_reduction(0.0, 1.0) == 0.0);
  CHECK(percent_reduction(100.0, 125.0) == -25.0);
  for (double f = 1.0; f < 200.0; f += 7.3) {
    for (double l = 0.5; l < 200.0; l += 11.1) {
      CHECK(percent_reduction(f, l) == std::round((f - l) / f * 10000.0) / 100.0);
    }
  }
}

TEST_CASE("summary statistics") {
  const std::vector<RunRecord> one{record("M-Linear", 10, 3.5)};
  const auto s1 = summarize(one);
  REQUIRE(s1.cells.size() == 1);
  CHECK(s1.cells[0].median == 3.5);
  CHECK(s1.cells[0].mean == 3.5);
  CHECK(s1.cells[0].min == 3.5);
  CHECK(s1.cells[0].max == 3.5);
  CHECK(s1.cells[0].variance == 0.0);
  CHECK(s1.cells[0].count == 1);

  std::vector<RunRecord> many{record("M-Fixed", 10, 82.72), record("M-Linear", 10, 74.70),
                              record("M-Fixed", 10, 82.72), record("M-Linear", 10, 74.70)};
  auto failed = record("M-Linear", 10, std::nan(""));
  failed.status = "diverged";
  many.push_back(failed);
  const auto s = summarize(many);
  REQUIRE(s.reductions.size() == 1);
  CHECK(s.reductions[0].percent == 9.70);
  CHECK(s.reductions[0].percent_median == 9.70);
  const auto* lin = find_cell(s, "M-Linear", "L/L", 10);
  REQUIRE(lin != nullptr);
  CHECK(lin->count == 2);
  CHECK(lin->failed == 1);

  const std::vector<RunRecord> spread{record("M-Float", 30, 1.0), record("M-Float", 30, 2.0),
                                      record("M-Float", 30, 6.0), record("M-Float", 30, 3.0)};
  const auto* c = find_cell(summarize(spread), "M-Float", "", 30);
  REQUIRE(c != nullptr);
  CHECK(c->median == 2.5);
  CHECK(c->mean == 3.0);
  CHECK(c->min == 1.0);
  CHECK(c->max == 6.0);
  CHECK(c->variance == doctest::Approx(14.0 / 3.0));

  CHECK_THROWS_AS(summarize(std::vector<RunRecord>{}), Error);
  CHECK(summary_to_json(s).find("\"percent\": 9.7") != std::string::npos);
}

TEST_CASE("cycle report document") {
  const auto r = cycle_report(30, 3, DesignKind::pipelined_linear, PowerTable::defaults());
  const auto json = cycle_report_to_json(r);
  CHECK(json.find("\"cycles\": 281") != std::string::npos);
  CHECK(json.find("\"energy_uj_2dp\": 0.09") != std::string::npos);
  const auto f = cycle_report(30, 3, DesignKind::fixed_baseline, PowerTable::defaults());
  CHECK(f.total_cycles == 304);
  CHECK(f.latency_s * 1e6 == doctest::Approx(3.04));
}
