#include "qmlp/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "qmlp/error.hpp"
#include "qmlp/int_infer.hpp"
#include "qmlp/package.hpp"

namespace qmlp {

namespace {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

[[noreturn]] void bad_config(const std::string& what) { throw Error(ErrorCode::invalid_argument, "config: " + what); }

void check_keys(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) bad_config(where + " must be an object");
  for (const auto& item : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; })) {
      bad_config("unknown key '" + item.key() + "' in " + where);
    }
  }
}

template <class T>
T get_or(const Json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    bad_config(std::string("key '") + key + "' has the wrong type");
  }
}

const char* trend_name(Trend t) { return t == Trend::upward ? "upward" : "upward-downward"; }

Trend parse_trend(const std::string& s) {
  if (s == "upward") return Trend::upward;
  if (s == "upward-downward") return Trend::upward_downward;
  bad_config("trend must be 'upward' or 'upward-downward'");
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string hex16(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

const char* to_string(Variant v) noexcept {
  switch (v) {
    case Variant::m_float: return "M-Float";
    case Variant::m_fixed: return "M-Fixed";
    case Variant::m_linear: return "M-Linear";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "M-Float") return Variant::m_float;
  if (name == "M-Fixed") return Variant::m_fixed;
  if (name == "M-Linear") return Variant::m_linear;
  throw Error(ErrorCode::invalid_argument, "unknown variant '" + name + "' (M-Float | M-Fixed | M-Linear)");
}

void ExperimentConfig::validate() const {
  if (variants.empty()) bad_config("at least one variant is required");
  if (hidden_sizes.empty()) bad_config("at least one hidden size is required");
  for (const auto h : hidden_sizes) {
    if (h == 0) bad_config("hidden sizes must be >= 1");
  }
  if (runs_per_fold < 1) bad_config("runs_per_fold must be >= 1");
  if (folds < 1) bad_config("folds must be >= 1");
  if (!(clock_hz > 0.0)) bad_config("clock_hz must be > 0");
  if (!csv) synthetic.validate();
  train.validate();
}

ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::parse, std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j,
             {"dataset", "hidden_sizes", "variants", "ablation", "folds", "runs_per_fold", "master_seed", "train",
              "power_mw", "clock_hz", "output_root", "threads"},
             "config");

  ExperimentConfig cfg;
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, {"csv", "synthetic"}, "dataset");
    if (d.contains("csv") == d.contains("synthetic")) bad_config("dataset needs exactly one of 'csv' or 'synthetic'");
    if (d.contains("csv")) {
      const auto& c = d.at("csv");
      check_keys(c, {"path", "inputs", "target"}, "dataset.csv");
      if (!c.contains("path") || !c.contains("inputs") || !c.contains("target")) {
        bad_config("dataset.csv needs path, inputs and target");
      }
      CsvSource src;
      src.path = get_or<std::string>(c, "path", "");
      if (src.path.is_relative() && !base_dir.empty()) src.path = base_dir / src.path;
      src.inputs = get_or<std::vector<std::string>>(c, "inputs", {});
      src.target = get_or<std::string>(c, "target", "");
      cfg.csv = std::move(src);
    } else {
      const auto& s = d.at("synthetic");
      check_keys(s, {"samples", "trend", "noise_std", "sensors", "seed"}, "dataset.synthetic");
      cfg.synthetic.samples = get_or<std::size_t>(s, "samples", cfg.synthetic.samples);
      cfg.synthetic.trend = parse_trend(get_or<std::string>(s, "trend", trend_name(cfg.synthetic.trend)));
      cfg.synthetic.noise_std = get_or<double>(s, "noise_std", cfg.synthetic.noise_std);
      cfg.synthetic.sensors = get_or<std::size_t>(s, "sensors", cfg.synthetic.sensors);
      cfg.synthetic.seed = get_or<std::uint64_t>(s, "seed", cfg.synthetic.seed);
    }
  }
  cfg.hidden_sizes = get_or(j, "hidden_sizes", cfg.hidden_sizes);
  if (j.contains("variants")) {
    cfg.variants.clear();
    for (const auto& name : get_or<std::vector<std::string>>(j, "variants", {})) {
      const auto v = parse_variant(name);
      if (std::find(cfg.variants.begin(), cfg.variants.end(), v) == cfg.variants.end()) cfg.variants.push_back(v);
    }
  }
  cfg.ablation = get_or(j, "ablation", cfg.ablation);
  cfg.folds = get_or(j, "folds", cfg.folds);
  cfg.runs_per_fold = get_or(j, "runs_per_fold", cfg.runs_per_fold);
  cfg.master_seed = get_or(j, "master_seed", cfg.master_seed);
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t,
               {"beta1", "beta2", "epsilon", "learning_rate", "step_size", "gamma", "max_epochs", "patience",
                "batch_size"},
               "train");
    auto& tc = cfg.train;
    tc.beta1 = get_or(t, "beta1", tc.beta1);
    tc.beta2 = get_or(t, "beta2", tc.beta2);
    tc.epsilon = get_or(t, "epsilon", tc.epsilon);
    tc.learning_rate = get_or(t, "learning_rate", tc.learning_rate);
    tc.step_size = get_or(t, "step_size", tc.step_size);
    tc.gamma = get_or(t, "gamma", tc.gamma);
    tc.max_epochs = get_or(t, "max_epochs", tc.max_epochs);
    tc.patience = get_or(t, "patience", tc.patience);
    tc.batch_size = get_or(t, "batch_size", tc.batch_size);
  }
  if (j.contains("power_mw")) {
    const auto& p = j.at("power_mw");
    check_keys(p, {"pipelined-linear", "fixed-baseline"}, "power_mw");
    for (const auto& design : p.items()) {
      if (!design.value().is_object()) bad_config("power_mw." + design.key() + " must map hidden sizes to mW");
      for (const auto& entry : design.value().items()) {
        std::size_t h = 0;
        const auto& key = entry.key();
        const auto res = std::from_chars(key.data(), key.data() + key.size(), h);
        if (res.ec != std::errc{} || res.ptr != key.data() + key.size() || h == 0) {
          bad_config("power_mw keys must be hidden sizes, got '" + key + "'");
        }
        if (!entry.value().is_number()) bad_config("power_mw values must be numbers");
        cfg.power.set(parse_design(design.key()), h, entry.value().get<double>() * 1e-3);
      }
    }
  }
  cfg.clock_hz = get_or(j, "clock_hz", cfg.clock_hz);
  if (j.contains("output_root")) {
    cfg.output_root = get_or<std::string>(j, "output_root", "");
    if (cfg.output_root.is_relative() && !base_dir.empty()) cfg.output_root = base_dir / cfg.output_root;
  }
  cfg.threads = get_or(j, "threads", cfg.threads);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open config '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

std::string canonical_config(const ExperimentConfig& cfg) {
  // Same keys as the input format, so the stored copy can be fed back in.
  Json j;
  if (cfg.csv) {
    j["dataset"]["csv"] = {{"path", cfg.csv->path.generic_string()}, {"inputs", cfg.csv->inputs},
                           {"target", cfg.csv->target}};
  } else {
    const auto& s = cfg.synthetic;
    j["dataset"]["synthetic"] = {{"samples", s.samples},
                                 {"trend", trend_name(s.trend)},
                                 {"noise_std", s.noise_std},
                                 {"sensors", s.sensors},
                                 {"seed", s.seed}};
  }
  j["hidden_sizes"] = cfg.hidden_sizes;
  j["variants"] = Json::array();
  for (const auto v : cfg.variants) j["variants"].push_back(to_string(v));
  j["ablation"] = cfg.ablation;
  j["folds"] = cfg.folds;
  j["runs_per_fold"] = cfg.runs_per_fold;
  j["master_seed"] = cfg.master_seed;
  const auto& t = cfg.train;
  j["train"] = {{"beta1", t.beta1},           {"beta2", t.beta2}, {"epsilon", t.epsilon},
                {"learning_rate", t.learning_rate}, {"step_size", t.step_size}, {"gamma", t.gamma},
                {"max_epochs", t.max_epochs}, {"patience", t.patience}, {"batch_size", t.batch_size}};
  Json power = Json::object();
  for (const auto& [key, watts] : cfg.power.entries()) {
    power[to_string(key.first)][std::to_string(key.second)] = watts * 1e3;
  }
  j["power_mw"] = std::move(power);
  j["clock_hz"] = cfg.clock_hz;
  return j.dump();
}

std::string config_hash(const ExperimentConfig& cfg) { return hex16(fnv1a64(canonical_config(cfg))); }

std::filesystem::path run_directory(const ExperimentConfig& cfg) {
  return cfg.output_root / ("run-" + config_hash(cfg));
}

Dataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.csv) return load_csv(cfg.csv->path, cfg.csv->inputs, cfg.csv->target);
  return gen_synthetic(cfg.synthetic);
}

std::uint64_t derive_run_seed(std::uint64_t master, int fold, int run, const std::string& tag, std::size_t hidden) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ static_cast<std::uint64_t>(fold));
  h = splitmix64(h ^ static_cast<std::uint64_t>(run));
  h = splitmix64(h ^ fnv1a64(tag));
  return splitmix64(h ^ static_cast<std::uint64_t>(hidden));
}

// ---- records CSV ----

namespace {

constexpr const char* record_header =
    "fold,run,seed,variant,hidden,schemes,status,test_mse,epochs,best_epoch,stopped_early,agreement,max_lsb_diff,"
    "design,cycles,latency_us,power_mw,energy_uj";

template <class T>
std::string opt_text(const std::optional<T>& v) {
  if (!v) return {};
  if constexpr (std::is_same_v<T, double>) {
    return format_double17(*v);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return *v;
  } else {
    return std::to_string(*v);
  }
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T>
T parse_number(const std::string& s, std::size_t row, std::size_t col) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ParseError(ErrorCode::parse, row, col, "'" + s + "' is not a valid number");
  }
  return v;
}

double parse_real(const std::string& s, std::size_t row, std::size_t col) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  return parse_number<double>(s, row, col);
}

template <class T>
std::optional<T> parse_opt(const std::string& s, std::size_t row, std::size_t col) {
  if (s.empty()) return std::nullopt;
  if constexpr (std::is_same_v<T, double>) {
    return parse_real(s, row, col);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return s;
  } else {
    return parse_number<T>(s, row, col);
  }
}

}  // namespace

std::string records_to_csv(std::span<const RunRecord> records) {
  std::string out = record_header;
  out += '\n';
  for (const auto& r : records) {
    out += std::to_string(r.fold) + ',' + std::to_string(r.run) + ',' + std::to_string(r.seed) + ',' + r.variant + ',' +
           std::to_string(r.hidden) + ',' + r.schemes + ',' + r.status + ',' +
           (std::isnan(r.test_mse) ? std::string("nan") : format_double17(r.test_mse)) + ',' +
           std::to_string(r.epochs) + ',' + std::to_string(r.best_epoch) + ',' + (r.stopped_early ? "1" : "0") + ',' +
           opt_text(r.agreement) + ',' + opt_text(r.max_lsb_diff) + ',' + opt_text(r.design) + ',' +
           opt_text(r.cycles) + ',' + opt_text(r.latency_us) + ',' + opt_text(r.power_mw) + ',' +
           opt_text(r.energy_uj) + '\n';
  }
  return out;
}

std::vector<RunRecord> records_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::empty_input, "records file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != record_header) throw ParseError(ErrorCode::parse, 1, 1, "unexpected records header");
  const std::size_t width = split_line(line).size();

  std::vector<RunRecord> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_line(line);
    if (f.size() != width) {
      throw ParseError(ErrorCode::parse, row, f.size(), "expected " + std::to_string(width) + " fields");
    }
    RunRecord r;
    r.fold = parse_number<int>(f[0], row, 1);
    r.run = parse_number<int>(f[1], row, 2);
    r.seed = parse_number<std::uint64_t>(f[2], row, 3);
    r.variant = f[3];
    r.hidden = parse_number<std::size_t>(f[4], row, 5);
    r.schemes = f[5];
    r.status = f[6];
    r.test_mse = parse_real(f[7], row, 8);
    r.epochs = parse_number<std::size_t>(f[8], row, 9);
    r.best_epoch = parse_number<std::size_t>(f[9], row, 10);
    if (f[10] != "0" && f[10] != "1") throw ParseError(ErrorCode::parse, row, 11, "stopped_early must be 0 or 1");
    r.stopped_early = f[10] == "1";
    r.agreement = parse_opt<double>(f[11], row, 12);
    r.max_lsb_diff = parse_opt<std::int64_t>(f[12], row, 13);
    r.design = parse_opt<std::string>(f[13], row, 14);
    r.cycles = parse_opt<std::uint64_t>(f[14], row, 15);
    r.latency_us = parse_opt<double>(f[15], row, 16);
    r.power_mw = parse_opt<double>(f[16], row, 17);
    r.energy_uj = parse_opt<double>(f[17], row, 18);
    out.push_back(std::move(r));
  }
  return out;
}

// ---- sweep ----

std::vector<FoldData> prepare_folds(const Dataset& ds, int folds) {
  std::vector<Partition> parts;
  if (folds == 1) {
    parts.push_back(split(ds, SplitSpec{}));
  } else {
    parts = make_folds(ds, folds);
  }
  std::vector<FoldData> out;
  out.reserve(parts.size());
  for (const auto& p : parts) {
    const auto stats = NormStats::fit(p.train);
    out.push_back({{normalize(p.train, stats), normalize(p.validation, stats), normalize(p.test, stats)}, stats});
  }
  return out;
}

namespace {

std::string cell_tag(const CellSpec& c) {
  return c.variant == "ablation" && c.schemes ? "ablation:" + c.schemes->label() : c.variant;
}

std::string package_name(const CellSpec& c) {
  std::string name = "f" + std::to_string(c.fold) + "-r" + std::to_string(c.run) + "-" + c.variant;
  if (c.variant == "ablation" && c.schemes) name += "-" + std::string{c.schemes->hidden.code(), c.schemes->output.code()};
  return name + "-h" + std::to_string(c.hidden) + ".json";
}

}  // namespace

RunRecord run_cell(const CellSpec& cell, const FoldData& fold, const ExperimentConfig& cfg,
                   const std::filesystem::path* package_dir) {
  RunRecord r;
  r.fold = cell.fold;
  r.run = cell.run;
  r.seed = derive_run_seed(cfg.master_seed, cell.fold, cell.run, cell_tag(cell), cell.hidden);
  r.variant = cell.variant;
  r.hidden = cell.hidden;
  r.schemes = cell.schemes ? cell.schemes->label() : std::string{};

  TrainConfig tc = cfg.train;
  tc.seed = r.seed;
  const auto& data = fold.data;
  try {
    if (!cell.schemes) {
      const auto res = train(init_model(data.train.features(), cell.hidden, r.seed), data.train, data.validation, tc);
      r.test_mse = evaluate_denormalized(res.model, data.test, fold.stats);
      r.epochs = res.history.epochs();
      r.best_epoch = res.history.best_epoch;
      r.stopped_early = res.history.stopped_early;
      return r;
    }

    const auto res = qat_train(data.train, data.validation, cell.hidden, *cell.schemes, tc);
    r.epochs = res.history.epochs();
    r.best_epoch = res.history.best_epoch;
    r.stopped_early = res.history.stopped_early;
    const auto q = convert(res.model, fold.stats);
    r.test_mse = evaluate_denormalized(q, data.test, fold.stats);

    std::size_t agree = 0;
    std::int64_t worst = 0;
    for (std::size_t i = 0; i < data.test.rows(); ++i) {
      const auto x = data.test.inputs.row(i);
      const std::int64_t fq_code = quantize(qat_forward(res.model, x), q.output_params);
      const std::int64_t diff = std::abs(int_forward(q, x).y_q - fq_code);
      worst = std::max(worst, diff);
      if (diff <= 1) ++agree;
    }
    r.agreement = static_cast<double>(agree) / static_cast<double>(data.test.rows());
    r.max_lsb_diff = worst;

    const bool all_fixed = cell.schemes->hidden.kind == SchemeKind::fixed_point &&
                           cell.schemes->output.kind == SchemeKind::fixed_point;
    const auto design = all_fixed ? DesignKind::fixed_baseline : DesignKind::pipelined_linear;
    const auto cycles = estimate_cycles(cell.hidden, q.inputs(), design);
    r.design = to_string(design);
    r.cycles = cycles;
    const double seconds = latency(cycles, cfg.clock_hz);
    r.latency_us = seconds * 1e6;
    if (const auto watts = cfg.power.lookup(design, cell.hidden)) {
      r.power_mw = *watts * 1e3;
      r.energy_uj = energy(*watts, seconds) * 1e6;
    }
    if (package_dir) export_package(q, *package_dir / package_name(cell));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::divergence && e.code() != ErrorCode::overflow) throw;
    r.status = e.code() == ErrorCode::divergence ? "diverged" : "overflow";
    r.test_mse = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

std::vector<CellSpec> sweep_cells(const ExperimentConfig& cfg) {
  std::vector<CellSpec> cells;
  for (int f = 0; f < cfg.folds; ++f) {
    for (int run = 0; run < cfg.runs_per_fold; ++run) {
      for (const auto v : cfg.variants) {
        for (const auto h : cfg.hidden_sizes) {
          CellSpec c{f, run, to_string(v), h, std::nullopt};
          if (v == Variant::m_fixed) c.schemes = SchemePair::parse("F/F");
          if (v == Variant::m_linear) c.schemes = SchemePair::parse("L/L");
          cells.push_back(std::move(c));
        }
      }
    }
  }
  return cells;
}

std::vector<CellSpec> ablation_cells(const ExperimentConfig& cfg) {
  std::vector<CellSpec> cells;
  for (const auto h : cfg.hidden_sizes) {
    for (const char* label : {"L/L", "L/F", "F/L", "F/F"}) {
      for (int run = 0; run < cfg.runs_per_fold; ++run) {
        cells.push_back({0, run, "ablation", h, SchemePair::parse(label)});
      }
    }
  }
  return cells;
}

std::vector<RunRecord> run_cells(std::span<const CellSpec> cells, const std::vector<FoldData>& folds,
                                 const ExperimentConfig& cfg, const std::filesystem::path* package_dir) {
  std::vector<RunRecord> out(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        out[i] = run_cell(cells[i], folds.at(static_cast<std::size_t>(cells[i].fold)), cfg, package_dir);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  unsigned n = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;
  n = static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(cells.size(), 1)));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg, const Dataset& ds,
                                 const std::filesystem::path* package_dir) {
  cfg.validate();
  const auto folds = prepare_folds(ds, cfg.folds);
  const auto cells = sweep_cells(cfg);
  return run_cells(cells, folds, cfg, package_dir);
}

std::vector<RunRecord> run_ablation(const ExperimentConfig& cfg, const Dataset& ds) {
  cfg.validate();
  const auto folds = prepare_folds(ds, cfg.folds);
  const auto cells = ablation_cells(cfg);
  return run_cells(cells, folds, cfg);
}

// ---- summaries ----

double percent_reduction(double fixed, double linear) {
  if (fixed == 0.0) return 0.0;
  return round2((fixed - linear) / fixed * 100.0);
}

double median(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorCode::empty_input, "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

int variant_rank(const std::string& v) {
  if (v == "M-Float") return 0;
  if (v == "M-Fixed") return 1;
  if (v == "M-Linear") return 2;
  return 3;
}

int scheme_rank(const std::string& s) {
  static const char* order[] = {"", "L/L", "L/F", "F/L", "F/F"};
  for (int i = 0; i < 5; ++i) {
    if (s == order[i]) return i;
  }
  return 5;
}

}  // namespace

Summary summarize(std::span<const RunRecord> records) {
  if (records.empty()) throw Error(ErrorCode::empty_input, "report needs at least one record");
  using Key = std::tuple<int, std::string, std::size_t, int, std::string>;
  std::map<Key, std::pair<std::vector<double>, std::size_t>> groups;
  for (const auto& r : records) {
    auto& g = groups[{variant_rank(r.variant), r.variant, r.hidden, scheme_rank(r.schemes), r.schemes}];
    if (r.status == "ok" && std::isfinite(r.test_mse)) {
      g.first.push_back(r.test_mse);
    } else {
      ++g.second;
    }
  }

  Summary s;
  for (const auto& [key, g] : groups) {
    CellSummary c;
    c.variant = std::get<1>(key);
    c.hidden = std::get<2>(key);
    c.schemes = std::get<4>(key);
    c.count = g.first.size();
    c.failed = g.second;
    if (c.count > 0) {
      const auto& v = g.first;
      c.median = median(v);
      double sum = 0.0;
      for (const double x : v) sum += x;
      c.mean = sum / static_cast<double>(v.size());
      c.min = *std::min_element(v.begin(), v.end());
      c.max = *std::max_element(v.begin(), v.end());
      if (v.size() > 1) {
        double ss = 0.0;
        for (const double x : v) ss += (x - c.mean) * (x - c.mean);
        c.variance = ss / static_cast<double>(v.size() - 1);
      }
    } else {
      c.median = c.mean = c.min = c.max = std::numeric_limits<double>::quiet_NaN();
    }
    s.cells.push_back(std::move(c));
  }

  std::map<std::size_t, std::pair<const CellSummary*, const CellSummary*>> pairs;
  for (const auto& c : s.cells) {
    if (c.count == 0) continue;
    if (c.variant == "M-Fixed") pairs[c.hidden].first = &c;
    if (c.variant == "M-Linear") pairs[c.hidden].second = &c;
  }
  for (const auto& [h, p] : pairs) {
    if (!p.first || !p.second) continue;
    s.reductions.push_back({h, p.first->mean, p.second->mean, percent_reduction(p.first->mean, p.second->mean),
                            percent_reduction(p.first->median, p.second->median)});
  }
  return s;
}

const CellSummary* find_cell(const Summary& s, const std::string& variant, const std::string& schemes,
                             std::size_t hidden) {
  for (const auto& c : s.cells) {
    if (c.variant == variant && c.schemes == schemes && c.hidden == hidden) return &c;
  }
  return nullptr;
}

namespace {

OrderedJson number_or_null(double v) { return std::isfinite(v) ? OrderedJson(v) : OrderedJson(nullptr); }

OrderedJson cell_json(const CellSummary& c) {
  OrderedJson j;
  j["variant"] = c.variant;
  j["schemes"] = c.schemes;
  j["hidden"] = c.hidden;
  j["count"] = c.count;
  j["failed"] = c.failed;
  j["median"] = number_or_null(c.median);
  j["mean"] = number_or_null(c.mean);
  j["min"] = number_or_null(c.min);
  j["max"] = number_or_null(c.max);
  j["variance"] = number_or_null(c.variance);
  return j;
}

}  // namespace

std::string summary_to_json(const Summary& s) {
  OrderedJson j;
  j["cells"] = OrderedJson::array();
  for (const auto& c : s.cells) j["cells"].push_back(cell_json(c));
  j["reductions"] = OrderedJson::array();
  for (const auto& r : s.reductions) {
    j["reductions"].push_back({{"hidden", r.hidden},
                               {"fixed_mean", r.fixed_mean},
                               {"linear_mean", r.linear_mean},
                               {"percent", r.percent},
                               {"percent_median", r.percent_median}});
  }
  return j.dump(2) + "\n";
}

std::string ablation_to_json(const Summary& s) {
  OrderedJson rows = OrderedJson::array();
  for (const auto& c : s.cells) {
    if (c.variant != "ablation") continue;
    const auto slash = c.schemes.find('/');
    OrderedJson row;
    row["hidden"] = c.hidden;
    row["hidden_layer"] = c.schemes.substr(0, slash);
    row["output_layer"] = slash == std::string::npos ? "" : c.schemes.substr(slash + 1);
    row["runs"] = c.count;
    row["failed"] = c.failed;
    row["median_mse"] = number_or_null(c.median);
    row["mean_mse"] = number_or_null(c.mean);
    rows.push_back(std::move(row));
  }
  OrderedJson j;
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string cycle_report_to_json(const CycleReport& r) {
  OrderedJson j;
  j["design"] = to_string(r.design);
  j["inputs"] = r.inputs;
  j["hidden"] = r.hidden;
  j["layer_cycles"] = r.layer_cycles;
  j["cycles"] = r.total_cycles;
  j["frequency_hz"] = r.frequency_hz;
  j["latency_us"] = r.latency_s * 1e6;
  j["power_mw"] = r.power_w * 1e3;
  j["energy_uj"] = r.energy_j * 1e6;
  j["energy_uj_2dp"] = round2(r.energy_j * 1e6);
  return j.dump(2) + "\n";
}

}  // namespace qmlp
