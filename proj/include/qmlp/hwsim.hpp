#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qmlp/int_infer.hpp"

namespace qmlp {

enum class DesignKind { pipelined_linear, fixed_baseline };

const char* to_string(DesignKind d) noexcept;
DesignKind parse_design(const std::string& name);

// Schedule of the linear-layer datapath. A row spends `row_setup` cycles
// loading W[j][0], x[0], B[j]; then one element enters the MAC loop every
// `issue_interval` cycles and needs `mac_depth` cycles to retire (load,
// zero-point subtract, multiply-accumulate); then `row_finish` cycles scale,
// shift and store. The layer adds `layer_setup` + `layer_finish`.
struct PipelineTiming {
  std::uint32_t layer_setup = 1;
  std::uint32_t row_setup = 1;
  std::uint32_t issue_interval = 1;
  std::uint32_t mac_depth = 3;
  std::uint32_t row_finish = 2;
  std::uint32_t layer_finish = 2;
};

PipelineTiming pipeline_timing(DesignKind design) noexcept;

// cost(J, K) = J * (cycles_per_element * K + per_row) + per_layer
struct StageCostModel {
  std::uint64_t cycles_per_element = 1;
  std::uint64_t per_row = 5;
  std::uint64_t per_layer = 3;

  [[nodiscard]] std::uint64_t layer_cycles(std::size_t rows, std::size_t cols) const noexcept {
    return rows * (cycles_per_element * cols + per_row) + per_layer;
  }
};

StageCostModel stage_cost_model(DesignKind design) noexcept;
StageCostModel stage_cost_model(const PipelineTiming& timing) noexcept;

struct TraceResult {
  std::vector<std::int8_t> outputs;
  std::uint64_t cycles = 0;
};

// Clocks the layer datapath cycle by cycle. Outputs are bit-identical to
// int_linear; accumulator overflow raises the same error.
TraceResult simulate_trace(const QuantizedLinearLayer& layer, std::span<const std::int8_t> x,
                           DesignKind design = DesignKind::pipelined_linear);

// Hidden layer, ReLU comparator (combinational, zero cycles), output layer.
TraceResult simulate_model_trace(const QuantizedMlp& m, std::span<const std::int8_t> x,
                                 DesignKind design = DesignKind::pipelined_linear);

std::uint64_t estimate_cycles(std::size_t hidden, std::size_t inputs, DesignKind design);

inline constexpr double default_clock_hz = 100e6;

double latency(std::uint64_t cycles, double frequency_hz);
double energy(double power_w, double latency_s);

// Board power per (design, hidden size), in watts.
class PowerTable {
public:
  // Measured XC7S15 figures: pipelined 31/32/33/34 mW, fixed baseline
  // 28/29/29/29 mW for H = 10/30/60/120.
  static PowerTable defaults();

  void set(DesignKind design, std::size_t hidden, double watts);
  [[nodiscard]] std::optional<double> lookup(DesignKind design, std::size_t hidden) const;
  [[nodiscard]] const std::map<std::pair<DesignKind, std::size_t>, double>& entries() const noexcept { return watts_; }

private:
  std::map<std::pair<DesignKind, std::size_t>, double> watts_;
};

struct CycleReport {
  DesignKind design = DesignKind::pipelined_linear;
  std::size_t inputs = 0;
  std::size_t hidden = 0;
  std::vector<std::uint64_t> layer_cycles;
  std::uint64_t total_cycles = 0;
  double frequency_hz = default_clock_hz;
  double latency_s = 0.0;
  double power_w = 0.0;
  double energy_j = 0.0;
};

// Throws invalid_argument when the table has no entry for (design, hidden).
CycleReport cycle_report(std::size_t hidden, std::size_t inputs, DesignKind design, const PowerTable& power,
                         double frequency_hz = default_clock_hz);

}  // namespace qmlp
