#include "qmlp/hwsim.hpp"

#include <algorithm>
#include <deque>
#include <limits>

#include "qmlp/error.hpp"

namespace qmlp {

const char* to_string(DesignKind d) noexcept {
  return d == DesignKind::pipelined_linear ? "pipelined-linear" : "fixed-baseline";
}

DesignKind parse_design(const std::string& name) {
  if (name == "pipelined-linear") return DesignKind::pipelined_linear;
  if (name == "fixed-baseline") return DesignKind::fixed_baseline;
  throw Error(ErrorCode::invalid_argument, "unknown design '" + name + "' (pipelined-linear | fixed-baseline)");
}

PipelineTiming pipeline_timing(DesignKind design) noexcept {
  if (design == DesignKind::pipelined_linear) {
    // load | subtract | MAC overlapped; scale multiply and shift/store in separate stages.
    return {.layer_setup = 1, .row_setup = 1, .issue_interval = 1, .mac_depth = 3, .row_finish = 2, .layer_finish = 2};
  }
  // Sequential MAC: fetch+subtract, then multiply-accumulate, no overlap.
  return {.layer_setup = 1, .row_setup = 1, .issue_interval = 2, .mac_depth = 2, .row_finish = 1, .layer_finish = 0};
}

StageCostModel stage_cost_model(const PipelineTiming& t) noexcept {
  return {t.issue_interval, std::uint64_t{t.row_setup} + t.mac_depth - t.issue_interval + t.row_finish,
          std::uint64_t{t.layer_setup} + t.layer_finish};
}

StageCostModel stage_cost_model(DesignKind design) noexcept { return stage_cost_model(pipeline_timing(design)); }

namespace {

enum class Phase { layer_setup, row_setup, mac, row_finish, layer_finish, done };

struct InFlight {
  std::size_t k = 0;
  std::uint32_t stage = 0;
  std::int32_t w = 0;
  std::int32_t x = 0;
};

class LayerDatapath {
public:
  LayerDatapath(const QuantizedLinearLayer& layer, std::span<const std::int8_t> x, const PipelineTiming& timing)
      : layer_(layer), x_(x), t_(timing), out_(layer.rows) {}

  TraceResult run() {
    std::uint64_t cycles = 0;
    enter(Phase::layer_setup, t_.layer_setup);
    while (phase_ != Phase::done) {
      tick();
      ++cycles;
    }
    return {std::move(out_), cycles};
  }

private:
  void enter(Phase p, std::uint32_t duration) {
    phase_ = p;
    remaining_ = duration;
    if (duration == 0) advance();
  }

  // Leaves the current phase once its fixed duration (or its work) is done.
  void advance() {
    switch (phase_) {
      case Phase::layer_setup:
        row_ = 0;
        begin_row();
        break;
      case Phase::row_setup:
        next_issue_ = 0;
        since_issue_ = t_.issue_interval;
        phase_ = Phase::mac;
        break;
      case Phase::mac:
        // Steps 12-13: scale by M0, shift, add Z_out, store; timed by row_finish.
        scale_and_store();
        enter(Phase::row_finish, t_.row_finish);
        break;
      case Phase::row_finish:
        if (++row_ < layer_.rows) {
          begin_row();
        } else {
          enter(Phase::layer_finish, t_.layer_finish);
        }
        break;
      case Phase::layer_finish:
        phase_ = Phase::done;
        break;
      case Phase::done:
        break;
    }
  }

  void begin_row() {
    // sum <- B[j]
    sum_ = layer_.bias[row_];
    enter(Phase::row_setup, t_.row_setup);
  }

  void tick() {
    switch (phase_) {
      case Phase::mac:
        mac_cycle();
        return;
      default:
        break;
    }
    if (--remaining_ == 0) advance();
  }

  void mac_cycle() {
    for (auto& e : pipe_) {
      ++e.stage;
      run_stage(e);
    }
    while (!pipe_.empty() && pipe_.front().stage + 1 == t_.mac_depth) pipe_.pop_front();
    if (next_issue_ < layer_.cols && since_issue_ >= t_.issue_interval) {
      InFlight e{next_issue_++, 0, 0, 0};
      run_stage(e);
      if (t_.mac_depth > 1) pipe_.push_back(e);
      since_issue_ = 0;
    }
    ++since_issue_;
    if (next_issue_ == layer_.cols && pipe_.empty()) advance();
  }

  void run_stage(InFlight& e) {
    const std::uint32_t subtract_stage = t_.mac_depth >= 3 ? 1 : 0;
    if (e.stage == 0) {
      e.w = layer_.weight(row_, e.k);
      e.x = x_[e.k];
    }
    if (e.stage == subtract_stage) {
      e.w -= layer_.weight_zero;
      e.x -= layer_.input_zero;
    }
    if (e.stage + 1 == t_.mac_depth) {
      sum_ += static_cast<std::int64_t>(e.w) * e.x;
      if (sum_ < std::numeric_limits<std::int32_t>::min() || sum_ > std::numeric_limits<std::int32_t>::max()) {
        throw Error(ErrorCode::overflow, "32-bit accumulator overflow in row " + std::to_string(row_));
      }
    }
  }

  void scale_and_store() {
    const std::int64_t y = requantize(sum_, layer_.requant);
    const std::int64_t stored = std::clamp<std::int64_t>(y + layer_.output_zero, layer_.output_min, layer_.output_max);
    out_[row_] = static_cast<std::int8_t>(stored);
  }

  const QuantizedLinearLayer& layer_;
  std::span<const std::int8_t> x_;
  PipelineTiming t_;
  std::vector<std::int8_t> out_;

  Phase phase_ = Phase::layer_setup;
  std::uint32_t remaining_ = 0;
  std::size_t row_ = 0;
  std::int64_t sum_ = 0;
  std::size_t next_issue_ = 0;
  std::uint32_t since_issue_ = 0;
  std::deque<InFlight> pipe_;
};

}  // namespace

TraceResult simulate_trace(const QuantizedLinearLayer& layer, std::span<const std::int8_t> x, DesignKind design) {
  if (x.size() != layer.cols) {
    throw Error(ErrorCode::dimension_mismatch,
                "layer expects " + std::to_string(layer.cols) + " inputs, got " + std::to_string(x.size()));
  }
  if (layer.rows == 0 || layer.cols == 0) throw Error(ErrorCode::invalid_argument, "layer has an empty dimension");
  return LayerDatapath(layer, x, pipeline_timing(design)).run();
}

TraceResult simulate_model_trace(const QuantizedMlp& m, std::span<const std::int8_t> x, DesignKind design) {
  auto hidden = simulate_trace(m.hidden, x, design);
  for (auto& v : hidden.outputs) v = std::max<std::int8_t>(v, static_cast<std::int8_t>(m.relu_zero));
  auto out = simulate_trace(m.output, hidden.outputs, design);
  out.cycles += hidden.cycles;
  return out;
}

std::uint64_t estimate_cycles(std::size_t hidden, std::size_t inputs, DesignKind design) {
  if (hidden == 0 || inputs == 0) throw Error(ErrorCode::invalid_argument, "estimate_cycles needs H >= 1 and D >= 1");
  const auto cost = stage_cost_model(design);
  return cost.layer_cycles(hidden, inputs) + cost.layer_cycles(1, hidden);
}

double latency(std::uint64_t cycles, double frequency_hz) {
  if (!(frequency_hz > 0.0)) throw Error(ErrorCode::invalid_argument, "clock frequency must be > 0");
  return static_cast<double>(cycles) / frequency_hz;
}

double energy(double power_w, double latency_s) {
  if (!(power_w >= 0.0)) throw Error(ErrorCode::invalid_argument, "power must be >= 0");
  return power_w * latency_s;
}

PowerTable PowerTable::defaults() {
  PowerTable t;
  const std::size_t sizes[] = {10, 30, 60, 120};
  const double pipelined_mw[] = {31, 32, 33, 34};
  const double fixed_mw[] = {28, 29, 29, 29};
  for (std::size_t i = 0; i < 4; ++i) {
    t.set(DesignKind::pipelined_linear, sizes[i], pipelined_mw[i] * 1e-3);
    t.set(DesignKind::fixed_baseline, sizes[i], fixed_mw[i] * 1e-3);
  }
  return t;
}

void PowerTable::set(DesignKind design, std::size_t hidden, double watts) {
  if (!(watts >= 0.0)) throw Error(ErrorCode::invalid_argument, "power must be >= 0");
  watts_[{design, hidden}] = watts;
}

std::optional<double> PowerTable::lookup(DesignKind design, std::size_t hidden) const {
  const auto it = watts_.find({design, hidden});
  if (it == watts_.end()) return std::nullopt;
  return it->second;
}

CycleReport cycle_report(std::size_t hidden, std::size_t inputs, DesignKind design, const PowerTable& power,
                         double frequency_hz) {
  const auto watts = power.lookup(design, hidden);
  if (!watts) {
    throw Error(ErrorCode::invalid_argument, std::string("no power entry for ") + to_string(design) +
                                                 " with H=" + std::to_string(hidden));
  }
  const auto cost = stage_cost_model(design);
  CycleReport r;
  r.design = design;
  r.inputs = inputs;
  r.hidden = hidden;
  r.layer_cycles = {cost.layer_cycles(hidden, inputs), cost.layer_cycles(1, hidden)};
  r.total_cycles = estimate_cycles(hidden, inputs, design);
  r.frequency_hz = frequency_hz;
  r.latency_s = latency(r.total_cycles, frequency_hz);
  r.power_w = *watts;
  r.energy_j = energy(r.power_w, r.latency_s);
  return r;
}

}  // namespace qmlp
