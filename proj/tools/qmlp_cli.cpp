#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qmlp/datakit.hpp"
#include "qmlp/error.hpp"
#include "qmlp/harness.hpp"
#include "qmlp/hwsim.hpp"
#include "qmlp/int_infer.hpp"
#include "qmlp/package.hpp"

namespace fs = std::filesystem;
using namespace qmlp;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorCode::io, "write to '" + path.string() + "' failed");
}

fs::path prepare_run_dir(const ExperimentConfig& cfg) {
  const auto dir = run_directory(cfg);
  fs::create_directories(dir);
  write_file(dir / "config.json", canonical_config(cfg) + "\n");
  return dir;
}

void emit(const std::string& key, const fs::path& value) {
  nlohmann::json j;
  j[key] = value.generic_string();
  std::cout << j.dump() << "\n";
}

int cmd_gen_data(const fs::path& config, const std::optional<fs::path>& out) {
  const auto cfg = load_config(config);
  const auto ds = load_dataset(cfg);
  const auto path = out ? *out : prepare_run_dir(cfg) / "data.csv";
  write_file(path, to_csv(ds));
  emit("data", path);
  return 0;
}

int cmd_train(const fs::path& config) {
  const auto cfg = load_config(config);
  const auto ds = load_dataset(cfg);
  const auto dir = prepare_run_dir(cfg);
  const auto packages = dir / "packages";
  fs::create_directories(packages);
  const auto records = run_sweep(cfg, ds, &packages);
  write_file(dir / "records.csv", records_to_csv(records));
  write_file(dir / "summary.json", summary_to_json(summarize(records)));
  if (cfg.ablation) {
    const auto grid = run_ablation(cfg, ds);
    write_file(dir / "ablation_records.csv", records_to_csv(grid));
    write_file(dir / "ablation.json", ablation_to_json(summarize(grid)));
  }
  emit("run_dir", dir);
  return 0;
}

int cmd_ablation(const fs::path& config) {
  const auto cfg = load_config(config);
  const auto ds = load_dataset(cfg);
  const auto dir = prepare_run_dir(cfg);
  const auto grid = run_ablation(cfg, ds);
  write_file(dir / "ablation_records.csv", records_to_csv(grid));
  write_file(dir / "ablation.json", ablation_to_json(summarize(grid)));
  emit("run_dir", dir);
  return 0;
}

int cmd_simulate(const fs::path& package, const std::string& design, const std::optional<fs::path>& config,
                 std::optional<double> frequency, const std::optional<fs::path>& out) {
  const auto model = load_package(package);
  PowerTable power = PowerTable::defaults();
  double hz = default_clock_hz;
  if (config) {
    const auto cfg = load_config(*config);
    power = cfg.power;
    hz = cfg.clock_hz;
  }
  if (frequency) hz = *frequency;
  const auto report = cycle_report(model.hidden_size(), model.inputs(), parse_design(design), power, hz);
  const auto text = cycle_report_to_json(report);
  if (out) write_file(*out, text);
  std::cout << text;
  return 0;
}

int cmd_infer(const fs::path& package, const fs::path& input, const fs::path& output,
              const std::optional<std::string>& target) {
  const auto model = load_package(package);
  const auto text = read_file(input);
  std::istringstream in(text);
  std::string header;
  while (std::getline(in, header) && header.find_first_not_of(" \t\r") == std::string::npos) {
  }
  if (!header.empty() && header.back() == '\r') header.pop_back();
  std::vector<std::string> columns;
  {
    std::istringstream h(header);
    std::string col;
    while (std::getline(h, col, ',')) {
      const auto b = col.find_first_not_of(" \t");
      const auto e = col.find_last_not_of(" \t");
      col = b == std::string::npos ? std::string{} : col.substr(b, e - b + 1);
      if (!target || col != *target) columns.push_back(col);
    }
  }
  if (columns.size() != model.inputs()) {
    throw Error(ErrorCode::dimension_mismatch, "package expects D=" + std::to_string(model.inputs()) +
                                                   " input columns, '" + input.string() + "' has " +
                                                   std::to_string(columns.size()));
  }
  if (columns.empty()) throw Error(ErrorCode::empty_input, "input CSV has no header");
  // Without a target column the first input doubles as the (unused) target.
  const auto ds = parse_csv(text, columns, target ? *target : columns.front(), input.string());
  const auto pred = int_predict_raw(model, ds.inputs);

  std::string csv = "prediction\n";
  for (const double y : pred) csv += format_double(y) + "\n";
  write_file(output, csv);
  nlohmann::json j;
  j["rows"] = pred.size();
  j["output"] = output.generic_string();
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_report(const fs::path& records, const std::optional<fs::path>& out) {
  const auto text = summary_to_json(summarize(records_from_csv(read_file(records))));
  if (out) write_file(*out, text);
  std::cout << text;
  return 0;
}

int fail(std::string_view code, const std::string& message) {
  nlohmann::json j;
  j["error"] = std::string(code);
  j["message"] = message;
  std::cerr << j.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantized MLP toolkit: training sweeps, integer inference and cycle estimates"};
  app.require_subcommand(1);

  fs::path config;
  std::optional<fs::path> out;
  fs::path package;
  std::string design = "pipelined-linear";
  std::optional<fs::path> sim_config;
  std::optional<double> frequency;
  fs::path input;
  fs::path output;
  std::optional<std::string> target;
  fs::path records;

  auto* gen = app.add_subcommand("gen-data", "Write the configured dataset as CSV");
  gen->add_option("--config", config, "Experiment config (JSON)")->required();
  gen->add_option("--out", out, "Output path (default: <run dir>/data.csv)");

  auto* train = app.add_subcommand("train", "Run the fold x run x variant x size sweep");
  train->add_option("--config", config, "Experiment config (JSON)")->required();

  auto* abl = app.add_subcommand("ablation", "Run the {L,F} x {L,F} scheme grid on one fold");
  abl->add_option("--config", config, "Experiment config (JSON)")->required();

  auto* sim = app.add_subcommand("simulate", "Cycle, latency and energy estimate for a package");
  sim->add_option("--package", package, "Deployment package")->required();
  sim->add_option("--design", design, "pipelined-linear | fixed-baseline");
  sim->add_option("--config", sim_config, "Take the power table and clock from this config");
  sim->add_option("--frequency", frequency, "Clock frequency in Hz");
  sim->add_option("--out", out, "Also write the report here");

  auto* inf = app.add_subcommand("infer", "Integer-only predictions for a CSV of raw inputs");
  inf->add_option("--package", package, "Deployment package")->required();
  inf->add_option("--input", input, "Input CSV with a header row")->required();
  inf->add_option("--output", output, "Predictions CSV")->required();
  inf->add_option("--target", target, "Column to ignore (e.g. the measured target)");

  auto* rep = app.add_subcommand("report", "Summarize a records CSV");
  rep->add_option("--records", records, "records.csv from train or ablation")->required();
  rep->add_option("--out", out, "Also write the summary here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*gen) return cmd_gen_data(config, out);
    if (*train) return cmd_train(config);
    if (*abl) return cmd_ablation(config);
    if (*sim) return cmd_simulate(package, design, sim_config, frequency, out);
    if (*inf) return cmd_infer(package, input, output, target);
    if (*rep) return cmd_report(records, out);
  } catch (const Error& e) {
    return fail(to_string(e.code()), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 1;
}
