#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qmlp/datakit.hpp"
#include "qmlp/hwsim.hpp"
#include "qmlp/mlp.hpp"
#include "qmlp/qat.hpp"

namespace qmlp {

enum class Variant { m_float, m_fixed, m_linear };

const char* to_string(Variant v) noexcept;
Variant parse_variant(const std::string& name);

struct CsvSource {
  std::filesystem::path path;
  std::vector<std::string> inputs;
  std::string target;
};

struct ExperimentConfig {
  std::optional<CsvSource> csv;    // takes precedence over `synthetic`
  SyntheticConfig synthetic;
  std::vector<std::size_t> hidden_sizes{10, 30, 60, 120};
  std::vector<Variant> variants{Variant::m_float, Variant::m_fixed, Variant::m_linear};
  bool ablation = false;
  int folds = 7;
  int runs_per_fold = 3;
  std::uint64_t master_seed = 0;
  TrainConfig train;
  PowerTable power = PowerTable::defaults();
  double clock_hz = default_clock_hz;
  std::filesystem::path output_root = "runs";
  unsigned threads = 1;  // 0 = one per hardware thread

  void validate() const;
};

// Reads a JSON config. Unknown keys are rejected; relative CSV paths are
// resolved against `base_dir`.
ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical JSON of every field that influences results (threads and the
// output root are left out), and its 16-hex-digit hash.
std::string canonical_config(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);
// <output_root>/run-<hash>
std::filesystem::path run_directory(const ExperimentConfig& cfg);

Dataset load_dataset(const ExperimentConfig& cfg);

// SplitMix64 chain over the cell coordinates. `tag` names the variant or
// the ablation scheme pair.
std::uint64_t derive_run_seed(std::uint64_t master, int fold, int run, const std::string& tag, std::size_t hidden);

struct RunRecord {
  int fold = 0;
  int run = 0;
  std::uint64_t seed = 0;
  std::string variant;   // M-Float, M-Fixed, M-Linear or "ablation"
  std::size_t hidden = 0;
  std::string schemes;   // empty for M-Float
  std::string status = "ok";
  double test_mse = 0.0;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  // Quantized variants only.
  std::optional<double> agreement;  // fraction of test rows within 1 output LSB
  std::optional<std::int64_t> max_lsb_diff;
  std::optional<std::string> design;
  std::optional<std::uint64_t> cycles;
  std::optional<double> latency_us;
  std::optional<double> power_mw;
  std::optional<double> energy_uj;

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

std::string records_to_csv(std::span<const RunRecord> records);
std::vector<RunRecord> records_from_csv(const std::string& text);

// Fold data shared by every cell of that fold: partitions normalized with
// statistics fitted on the training rows only.
struct FoldData {
  Partition data;
  NormStats stats;
};

std::vector<FoldData> prepare_folds(const Dataset& ds, int folds);

struct CellSpec {
  int fold = 0;
  int run = 0;
  std::string variant;
  std::size_t hidden = 0;
  std::optional<SchemePair> schemes;  // absent for M-Float
};

// Trains, converts and measures one cell. Divergence is recorded in the
// returned status instead of being thrown. When `package_dir` is given the
// converted model is exported there.
RunRecord run_cell(const CellSpec& cell, const FoldData& fold, const ExperimentConfig& cfg,
                   const std::filesystem::path* package_dir = nullptr);

// Every (fold, run, variant, size) cell, in that nesting order.
std::vector<CellSpec> sweep_cells(const ExperimentConfig& cfg);
// {L,F} x {L,F} per size on fold 0, runs_per_fold seeds each.
std::vector<CellSpec> ablation_cells(const ExperimentConfig& cfg);

// Runs the cells on cfg.threads workers. Output order follows `cells`
// whatever the scheduling.
std::vector<RunRecord> run_cells(std::span<const CellSpec> cells, const std::vector<FoldData>& folds,
                                 const ExperimentConfig& cfg, const std::filesystem::path* package_dir = nullptr);

std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg, const Dataset& ds,
                                 const std::filesystem::path* package_dir = nullptr);
std::vector<RunRecord> run_ablation(const ExperimentConfig& cfg, const Dataset& ds);

struct CellSummary {
  std::string variant;
  std::string schemes;
  std::size_t hidden = 0;
  std::size_t count = 0;
  std::size_t failed = 0;
  double median = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double variance = 0.0;  // sample variance, 0 for a single record
};

struct Reduction {
  std::size_t hidden = 0;
  double fixed_mean = 0.0;
  double linear_mean = 0.0;
  double percent = 0.0;         // on means, 2 decimals
  double percent_median = 0.0;  // on medians, 2 decimals
};

struct Summary {
  std::vector<CellSummary> cells;
  std::vector<Reduction> reductions;
};

// (fixed - linear) / fixed * 100, rounded to 2 decimals. 0 when fixed == 0.
double percent_reduction(double fixed, double linear);
double median(std::vector<double> v);

Summary summarize(std::span<const RunRecord> records);
const CellSummary* find_cell(const Summary& s, const std::string& variant, const std::string& schemes,
                             std::size_t hidden);

std::string summary_to_json(const Summary& s);
// Table IV layout: one row per hidden size and scheme pair.
std::string ablation_to_json(const Summary& s);
std::string cycle_report_to_json(const CycleReport& r);

}  // namespace qmlp
