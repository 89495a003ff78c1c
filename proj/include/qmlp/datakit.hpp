#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qmlp/matrix.hpp"

namespace qmlp {

// Sensor-input matrix plus flow target, one row per time step.
struct Dataset {
  std::string name;
  std::vector<std::string> input_names;
  std::string target_name;
  Matrix<double> inputs;  // N x D
  std::vector<double> targets;

  [[nodiscard]] std::size_t rows() const noexcept { return targets.size(); }
  [[nodiscard]] std::size_t features() const noexcept { return inputs.cols(); }

  // Rows [begin, end) in order.
  [[nodiscard]] Dataset slice(std::size_t begin, std::size_t end) const;
  // Rows at the given indices, in the order given.
  [[nodiscard]] Dataset gather(std::span<const std::size_t> indices) const;

  // Throws if the shape invariants (N >= 1, D >= 1, equal row counts, finite values) fail.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct ColumnRange {
  double min = 0.0;
  double max = 1.0;

  friend bool operator==(const ColumnRange&, const ColumnRange&) = default;
};

struct NormStats {
  std::vector<ColumnRange> inputs;
  ColumnRange target;

  // Column-wise min/max over every row of `ds`. Callers pass the training partition.
  static NormStats fit(const Dataset& ds);
  // min = 0, max = 1 for every column.
  static NormStats identity(std::size_t features);

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

double normalize_value(double x, const ColumnRange& range) noexcept;
double denormalize_value(double x, const ColumnRange& range) noexcept;

Dataset normalize(const Dataset& ds, const NormStats& stats);
std::vector<double> denormalize(std::span<const double> y, const NormStats& stats);

struct SplitSpec {
  double train = 0.75;
  double validation = 0.125;
  double test = 0.125;
  int folds = 7;

  void validate() const;
};

struct Partition {
  Dataset train;
  Dataset validation;
  Dataset test;
};

struct PartitionSizes {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;

  friend bool operator==(const PartitionSizes&, const PartitionSizes&) = default;
};

// Row counts a contiguous split of `n` rows would produce.
PartitionSizes split_sizes(std::size_t n, const SplitSpec& spec);

// Contiguous, time-ordered train / validation / test partitions.
Partition split(const Dataset& ds, const SplitSpec& spec);

// Index sets for one cross-validation fold; train holds the indices of every
// block except the fold's own, in temporal order.
struct FoldIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

std::vector<FoldIndices> fold_indices(std::size_t n, int k);
std::vector<Partition> make_folds(const Dataset& ds, int k);

enum class Trend { upward, upward_downward };

struct SyntheticConfig {
  std::size_t samples = 1800;
  Trend trend = Trend::upward;
  double noise_std = 0.01;
  std::size_t sensors = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

Dataset gen_synthetic(const SyntheticConfig& cfg);

Dataset load_csv(const std::filesystem::path& path,
                 const std::vector<std::string>& input_columns,
                 const std::string& target_column);
// Same contract as load_csv, reading from an in-memory document.
Dataset parse_csv(const std::string& text,
                  const std::vector<std::string>& input_columns,
                  const std::string& target_column,
                  const std::string& name = "csv");

// Header "<inputs...>,<target>", doubles at round-trip precision, '\n' line ends.
std::string to_csv(const Dataset& ds);
void write_csv(const Dataset& ds, const std::filesystem::path& path);

// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace qmlp
