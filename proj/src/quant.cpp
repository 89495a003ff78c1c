#include "qmlp/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qmlp/error.hpp"

namespace qmlp {

namespace {

constexpr double degenerate_width = 1e-12;

void check_bits(int bits) {
  if (bits < 2 || bits > 32) {
    throw Error(ErrorCode::invalid_argument, "bit width " + std::to_string(bits) + " outside [2, 32]");
  }
}

std::int64_t range_min(int bits) { return -(std::int64_t{1} << (bits - 1)); }
std::int64_t range_max(int bits) { return (std::int64_t{1} << (bits - 1)) - 1; }

}  // namespace

QuantParams QuantParams::make(double scale, std::int32_t zero_point, int bits) {
  check_bits(bits);
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorCode::invalid_argument, "quantization scale must be positive and finite");
  }
  QuantParams qp{scale, zero_point, bits, range_min(bits), range_max(bits)};
  if (zero_point < qp.q_min || zero_point > qp.q_max) {
    throw Error(ErrorCode::invalid_argument, "zero point " + std::to_string(zero_point) + " outside quantized range");
  }
  return qp;
}

std::int64_t quantize(double x, const QuantParams& qp) noexcept {
  // Clamp in floating point first so huge |x / S| never reaches the integer cast.
  const double q = std::round(x / qp.scale) + static_cast<double>(qp.zero_point);
  const double clamped = std::clamp(q, static_cast<double>(qp.q_min), static_cast<double>(qp.q_max));
  return static_cast<std::int64_t>(clamped);
}

double dequantize(std::int64_t xq, const QuantParams& qp) noexcept {
  return qp.scale * static_cast<double>(xq - qp.zero_point);
}

QuantParams affine_params(double min, double max, int bits) {
  check_bits(bits);
  if (!(min <= max)) throw Error(ErrorCode::invalid_argument, "affine range needs min <= max");
  const double lo = std::min(min, 0.0);
  const double hi = std::max(max, 0.0);
  if (hi - lo < degenerate_width) return QuantParams::make(1.0, 0, bits);
  const double levels = std::ldexp(1.0, bits) - 1.0;
  const double scale = (hi - lo) / levels;
  const auto q_min = range_min(bits);
  const auto q_max = range_max(bits);
  const double z = std::clamp(std::round(static_cast<double>(q_min) - lo / scale), static_cast<double>(q_min),
                              static_cast<double>(q_max));
  return QuantParams::make(scale, static_cast<std::int32_t>(z), bits);
}

QuantParams compute_affine_params(const ObserverState& obs, int bits) {
  if (!obs.initialized) throw Error(ErrorCode::invalid_argument, "observer has not seen any data");
  return affine_params(obs.min, obs.max, bits);
}

QuantParams symmetric_params(double min, double max, int bits) {
  check_bits(bits);
  const double bound = std::max(std::abs(min), std::abs(max));
  if (bound < degenerate_width) return QuantParams::make(1.0, 0, bits);
  return QuantParams::make(bound / static_cast<double>(range_max(bits)), 0, bits);
}

QuantParams fixed_point_params(const FixedPointFormat& fmt) {
  if (fmt.frac_bits < 0 || fmt.frac_bits >= fmt.total_bits) {
    throw Error(ErrorCode::invalid_argument, "fixed-point format needs 0 <= a < b");
  }
  return QuantParams::make(std::ldexp(1.0, -fmt.frac_bits), 0, fmt.total_bits);
}

ObserverState update_observer(ObserverState obs, std::span<const double> batch) {
  if (batch.empty()) throw Error(ErrorCode::invalid_argument, "observer update with an empty batch");
  const auto [lo, hi] = std::minmax_element(batch.begin(), batch.end());
  if (!obs.initialized) {
    obs.min = *lo;
    obs.max = *hi;
    obs.initialized = true;
  } else {
    obs.min = obs.momentum * obs.min + (1.0 - obs.momentum) * *lo;
    obs.max = obs.momentum * obs.max + (1.0 - obs.momentum) * *hi;
  }
  return obs;
}

RequantMultiplier approximate_multiplier(double m) {
  if (!(m > 0.0) || !std::isfinite(m)) {
    throw Error(ErrorCode::conversion, "requantization multiplier must be positive and finite");
  }
  int exponent = 0;
  const double fraction = std::frexp(m, &exponent);  // m = fraction * 2^exponent, fraction in [0.5, 1)
  auto m0 = static_cast<std::int64_t>(std::round(std::ldexp(fraction, 31)));
  int shift = 31 - exponent;
  if (m0 == (std::int64_t{1} << 31)) {
    m0 >>= 1;
    --shift;
  }
  if (shift < 0 || shift > 62) {
    throw Error(ErrorCode::conversion, "multiplier " + std::to_string(m) + " needs a shift outside [0, 62]");
  }
  return {m, static_cast<std::uint32_t>(m0), shift};
}

std::vector<std::int32_t> quantize_bias(std::span<const double> bias, double input_scale, double weight_scale) {
  const double scale = input_scale * weight_scale;
  if (!(input_scale > 0.0) || !(weight_scale > 0.0) || !(scale > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "bias quantization needs positive scales");
  }
  std::vector<std::int32_t> out(bias.size());
  for (std::size_t i = 0; i < bias.size(); ++i) {
    const double q = std::round(bias[i] / scale);
    if (!(q >= std::numeric_limits<std::int32_t>::min() && q <= std::numeric_limits<std::int32_t>::max())) {
      throw Error(ErrorCode::overflow, "bias " + std::to_string(bias[i]) + " does not fit a 32-bit quantized bias");
    }
    out[i] = static_cast<std::int32_t>(q);
  }
  return out;
}

}  // namespace qmlp
