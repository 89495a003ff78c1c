#include "qmlp/datakit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_map>

#include "qmlp/error.hpp"

namespace qmlp {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

}  // namespace

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::io: return "io";
    case ErrorCode::parse: return "parse";
    case ErrorCode::missing_column: return "missing_column";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::empty_partition: return "empty_partition";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::overflow: return "overflow";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::conversion: return "conversion";
    case ErrorCode::package_version: return "package_version";
    case ErrorCode::package_checksum: return "package_checksum";
    case ErrorCode::package_malformed: return "package_malformed";
  }
  return "unknown";
}

ParseError::ParseError(ErrorCode code, std::size_t row, std::size_t column, const std::string& what)
    : Error(code, "row " + std::to_string(row) + ", column " + std::to_string(column) + ": " + what),
      row_(row),
      column_(column) {}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return gather(idx);
}

Dataset Dataset::gather(std::span<const std::size_t> indices) const {
  Dataset out;
  out.name = name;
  out.input_names = input_names;
  out.target_name = target_name;
  out.inputs = Matrix<double>(indices.size(), features());
  out.targets.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = inputs.row(indices[i]);
    std::copy(src.begin(), src.end(), out.inputs.row(i).begin());
    out.targets[i] = targets[indices[i]];
  }
  return out;
}

void Dataset::validate() const {
  if (rows() == 0) throw Error(ErrorCode::empty_input, "dataset '" + name + "' has no rows");
  if (features() == 0) throw Error(ErrorCode::empty_input, "dataset '" + name + "' has no input columns");
  if (inputs.rows() != targets.size()) {
    throw Error(ErrorCode::dimension_mismatch, "dataset '" + name + "': input and target row counts differ");
  }
  const auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(inputs.flat().begin(), inputs.flat().end(), finite) ||
      !std::all_of(targets.begin(), targets.end(), finite)) {
    throw Error(ErrorCode::invalid_argument, "dataset '" + name + "' contains non-finite values");
  }
}

NormStats NormStats::fit(const Dataset& ds) {
  ds.validate();
  NormStats stats;
  stats.inputs.resize(ds.features());
  for (std::size_t c = 0; c < ds.features(); ++c) {
    double lo = ds.inputs(0, c);
    double hi = lo;
    for (std::size_t r = 1; r < ds.rows(); ++r) {
      lo = std::min(lo, ds.inputs(r, c));
      hi = std::max(hi, ds.inputs(r, c));
    }
    stats.inputs[c] = {lo, hi};
  }
  const auto [lo, hi] = std::minmax_element(ds.targets.begin(), ds.targets.end());
  stats.target = {*lo, *hi};
  return stats;
}

NormStats NormStats::identity(std::size_t features) {
  return {std::vector<ColumnRange>(features, ColumnRange{0.0, 1.0}), ColumnRange{0.0, 1.0}};
}

double normalize_value(double x, const ColumnRange& range) noexcept {
  const double width = range.max - range.min;
  if (!(width > 0.0)) return 0.0;
  return (x - range.min) / width;
}

double denormalize_value(double x, const ColumnRange& range) noexcept {
  return x * (range.max - range.min) + range.min;
}

Dataset normalize(const Dataset& ds, const NormStats& stats) {
  if (stats.inputs.size() != ds.features()) {
    throw Error(ErrorCode::dimension_mismatch,
                "normalization stats cover " + std::to_string(stats.inputs.size()) +
                    " input columns, dataset has " + std::to_string(ds.features()));
  }
  Dataset out = ds;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.inputs.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = normalize_value(row[c], stats.inputs[c]);
    out.targets[r] = normalize_value(out.targets[r], stats.target);
  }
  return out;
}

std::vector<double> denormalize(std::span<const double> y, const NormStats& stats) {
  std::vector<double> out(y.size());
  std::transform(y.begin(), y.end(), out.begin(),
                 [&](double v) { return denormalize_value(v, stats.target); });
  return out;
}

void SplitSpec::validate() const {
  if (train <= 0.0 || validation <= 0.0 || test <= 0.0 ||
      std::abs(train + validation + test - 1.0) > 1e-9) {
    throw Error(ErrorCode::invalid_argument, "split fractions must be positive and sum to 1");
  }
  if (folds < 1) throw Error(ErrorCode::invalid_argument, "fold count must be >= 1");
}

PartitionSizes split_sizes(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  PartitionSizes sizes;
  sizes.train = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(n) + 1e-9));
  const std::size_t rest = n - std::min(n, sizes.train);
  const double val_share = spec.validation / (spec.validation + spec.test);
  sizes.validation = static_cast<std::size_t>(std::floor(val_share * static_cast<double>(rest) + 1e-9));
  sizes.test = rest - sizes.validation;
  if (sizes.train == 0 || sizes.validation == 0 || sizes.test == 0) {
    throw Error(ErrorCode::empty_partition, "cannot split " + std::to_string(n) + " rows: a partition would be empty");
  }
  return sizes;
}

Partition split(const Dataset& ds, const SplitSpec& spec) {
  const auto sizes = split_sizes(ds.rows(), spec);
  const std::size_t a = sizes.train;
  const std::size_t b = a + sizes.validation;
  return {ds.slice(0, a), ds.slice(a, b), ds.slice(b, ds.rows())};
}

std::vector<FoldIndices> fold_indices(std::size_t n, int k) {
  if (k < 2) throw Error(ErrorCode::invalid_argument, "cross-validation needs k >= 2 folds");
  const auto blocks = static_cast<std::size_t>(k);
  if (n < 4 * blocks) {
    throw Error(ErrorCode::empty_partition,
                std::to_string(n) + " rows are too few for " + std::to_string(k) + " folds (need >= 4k)");
  }
  const auto bound = [&](std::size_t b) { return b * n / blocks; };
  std::vector<FoldIndices> folds(blocks);
  for (std::size_t f = 0; f < blocks; ++f) {
    const std::size_t begin = bound(f);
    const std::size_t end = bound(f + 1);
    const std::size_t mid = begin + (end - begin) / 2;
    auto& fold = folds[f];
    fold.train.reserve(n - (end - begin));
    for (std::size_t i = 0; i < n; ++i) {
      if (i < begin || i >= end) {
        fold.train.push_back(i);
      } else if (i < mid) {
        fold.validation.push_back(i);
      } else {
        fold.test.push_back(i);
      }
    }
  }
  return folds;
}

std::vector<Partition> make_folds(const Dataset& ds, int k) {
  std::vector<Partition> out;
  for (const auto& f : fold_indices(ds.rows(), k)) {
    out.push_back({ds.gather(f.train), ds.gather(f.validation), ds.gather(f.test)});
  }
  return out;
}

void SyntheticConfig::validate() const {
  if (samples < 8) throw Error(ErrorCode::invalid_argument, "synthetic sample count must be >= 8");
  if (!(noise_std >= 0.0)) throw Error(ErrorCode::invalid_argument, "noise std must be >= 0");
  if (sensors < 1) throw Error(ErrorCode::invalid_argument, "synthetic sensor count must be >= 1");
}

Dataset gen_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  constexpr double flow_lo = 4.0;
  constexpr double flow_hi = 36.0;
  // Ramp with periodic plateaus; slope 1 - 0.6 cos(.) stays positive.
  constexpr double wiggle = 0.6;
  constexpr double periods = 4.0;
  const auto ramp = [](double u) {
    const double w = 2.0 * std::numbers::pi * periods;
    return u - wiggle * std::sin(w * u) / w;
  };

  Dataset ds;
  ds.name = cfg.trend == Trend::upward ? "synthetic-upward" : "synthetic-upward-downward";
  ds.target_name = "flow";
  for (std::size_t c = 0; c < cfg.sensors; ++c) ds.input_names.push_back("level_" + std::to_string(c));
  ds.inputs = Matrix<double>(cfg.samples, cfg.sensors);
  ds.targets.resize(cfg.samples);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double last = static_cast<double>(cfg.samples - 1);
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    double u = static_cast<double>(i) / last;
    if (cfg.trend == Trend::upward_downward) u = u <= 0.5 ? 2.0 * u : 2.0 - 2.0 * u;
    const double f = ramp(u);
    ds.targets[i] = flow_lo + (flow_hi - flow_lo) * f;
    for (std::size_t c = 0; c < cfg.sensors; ++c) {
      // Alternating concave / convex response curves, one exponent per channel.
      const double k = 1.0 + 0.5 * static_cast<double>(c / 2 + 1);
      const double exponent = c % 2 == 0 ? 1.0 / k : k;
      const double base = 0.1 + 0.05 * static_cast<double>(c);
      const double gain = 0.6 + 0.1 * static_cast<double>(c % 3);
      const double level = base + gain * std::pow(f, exponent);
      ds.inputs(i, c) = level + (cfg.noise_std > 0.0 ? cfg.noise_std * noise(rng) : 0.0);
    }
  }
  return ds;
}

Dataset parse_csv(const std::string& text,
                  const std::vector<std::string>& input_columns,
                  const std::string& target_column,
                  const std::string& name) {
  if (input_columns.empty()) throw Error(ErrorCode::invalid_argument, "no input columns requested");
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw Error(ErrorCode::empty_input, "CSV '" + name + "' is empty");

  const auto header = split_fields(line);
  std::unordered_map<std::string_view, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position.emplace(header[i], i);
  const auto locate = [&](const std::string& col) {
    const auto it = position.find(col);
    if (it == position.end()) {
      throw ParseError(ErrorCode::missing_column, line_no, 0, "column '" + col + "' not found in header");
    }
    return it->second;
  };
  std::vector<std::size_t> input_pos;
  for (const auto& c : input_columns) input_pos.push_back(locate(c));
  const std::size_t target_pos = locate(target_column);

  std::vector<double> values;
  std::vector<double> targets;
  const auto parse_cell = [&](const std::vector<std::string_view>& fields, std::size_t pos) {
    if (pos >= fields.size()) {
      throw ParseError(ErrorCode::parse, line_no, pos + 1, "row has only " + std::to_string(fields.size()) + " fields");
    }
    const auto cell = fields[pos];
    double v = 0.0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (cell.empty() || res.ec != std::errc{} || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
      throw ParseError(ErrorCode::parse, line_no, pos + 1, "non-numeric value '" + std::string(cell) + "'");
    }
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError(ErrorCode::parse, line_no, 0,
                       "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    for (const auto pos : input_pos) values.push_back(parse_cell(fields, pos));
    targets.push_back(parse_cell(fields, target_pos));
  }
  if (targets.empty()) throw Error(ErrorCode::empty_input, "CSV '" + name + "' has a header but no data rows");

  Dataset ds;
  ds.name = name;
  ds.input_names = input_columns;
  ds.target_name = target_column;
  ds.inputs = Matrix<double>(targets.size(), input_columns.size(), std::move(values));
  ds.targets = std::move(targets);
  return ds;
}

Dataset load_csv(const std::filesystem::path& path,
                 const std::vector<std::string>& input_columns,
                 const std::string& target_column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), input_columns, target_column, path.filename().string());
}

std::string to_csv(const Dataset& ds) {
  std::string out;
  for (const auto& n : ds.input_names) out += n + ',';
  out += ds.target_name + '\n';
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (const double v : ds.inputs.row(r)) out += format_double(v) + ',';
    out += format_double(ds.targets[r]) + '\n';
  }
  return out;
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write '" + path.string() + "'");
  out << to_csv(ds);
}

}  // namespace qmlp
