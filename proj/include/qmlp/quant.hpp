#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace qmlp {

// Signed b-bit affine quantization: x_q = clamp(round(x / S) + Z, q_min, q_max),
// x' = S * (x_q - Z). Rounding is half away from zero everywhere.
struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;
  int bits = 8;
  std::int64_t q_min = -128;
  std::int64_t q_max = 127;

  // Validates S > 0, 2 <= bits <= 32 and q_min <= Z <= q_max.
  static QuantParams make(double scale, std::int32_t zero_point, int bits);

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

struct FixedPointFormat {
  int frac_bits = 6;
  int total_bits = 8;

  friend bool operator==(const FixedPointFormat&, const FixedPointFormat&) = default;
};

// Running range of a tensor. The first update copies the batch range, later
// ones blend it in with an exponential moving average.
struct ObserverState {
  double min = 0.0;
  double max = 0.0;
  double momentum = 0.99;
  bool initialized = false;

  friend bool operator==(const ObserverState&, const ObserverState&) = default;
};

// M ~= M0 * 2^-shift with M0 in [2^30, 2^31).
struct RequantMultiplier {
  double real = 0.0;
  std::uint32_t m0 = 0;
  int shift = 0;

  friend bool operator==(const RequantMultiplier&, const RequantMultiplier&) = default;
};

std::int64_t quantize(double x, const QuantParams& qp) noexcept;
double dequantize(std::int64_t xq, const QuantParams& qp) noexcept;

// Range [min, max] is widened to contain 0 so that zero stays exactly
// representable; S = (max - min) / (2^b - 1), Z = round(q_min - min / S).
// A range collapsed onto zero yields S = 1, Z = 0.
QuantParams affine_params(double min, double max, int bits);
QuantParams compute_affine_params(const ObserverState& obs, int bits);

// Zero-point-free parameters covering +-max(|min|, |max|); used for biases.
QuantParams symmetric_params(double min, double max, int bits);

// S = 2^-a, Z = 0.
QuantParams fixed_point_params(const FixedPointFormat& fmt);

ObserverState update_observer(ObserverState obs, std::span<const double> batch);

RequantMultiplier approximate_multiplier(double m);

// B*_q[i] = round(B[i] / (S_x * S_w)), zero-point free, 32-bit signed.
std::vector<std::int32_t> quantize_bias(std::span<const double> bias, double input_scale, double weight_scale);

}  // namespace qmlp
