#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "qmlp/datakit.hpp"
#include "qmlp/quant.hpp"

namespace qmlp {

class QatModel;

// Integer-only fully connected layer:
//   acc_j = sum_k (x_k - Z_in)(W_jk - Z_W) + B*_j          (32-bit)
//   y_j   = clamp(((acc_j * M0 + 2^(n-1)) >> n) + Z_out, out_min, out_max)
struct QuantizedLinearLayer {
  std::size_t rows = 0;  // J, output features
  std::size_t cols = 0;  // K, input features
  std::vector<std::int8_t> weights;  // J x K row-major
  std::int32_t weight_zero = 0;
  std::vector<std::int32_t> bias;    // J, scale S_in * S_W, no zero point
  std::int32_t input_zero = 0;
  std::int32_t output_zero = 0;
  RequantMultiplier requant;
  std::int32_t output_min = -128;
  std::int32_t output_max = 127;

  [[nodiscard]] std::int8_t weight(std::size_t j, std::size_t k) const noexcept { return weights[j * cols + k]; }

  // Throws package_malformed-style errors when the invariants do not hold.
  void validate() const;

  friend bool operator==(const QuantizedLinearLayer&, const QuantizedLinearLayer&) = default;
};

struct QuantizedMlp {
  QuantizedLinearLayer hidden;
  std::int32_t relu_zero = 0;  // Z_A1, shared by the ReLU and the output layer input
  QuantizedLinearLayer output;
  QuantParams input_params;
  QuantParams output_params;
  NormStats norm;

  [[nodiscard]] std::size_t inputs() const noexcept { return hidden.cols; }
  [[nodiscard]] std::size_t hidden_size() const noexcept { return hidden.rows; }

  void validate() const;

  friend bool operator==(const QuantizedMlp&, const QuantizedMlp&) = default;
};

// Builds the integer model from a frozen QAT model. `norm` travels with the
// package so deployment can map raw sensor values itself.
QuantizedMlp convert(const QatModel& m, const NormStats& norm);
QuantizedMlp convert(const QatModel& m);

// (acc * M0 + 2^(n-1)) >> n: rounds to nearest (ties toward +inf); 64-bit intermediate.
std::int64_t requantize(std::int64_t acc, const RequantMultiplier& rq) noexcept;

std::vector<std::int8_t> int_linear(const QuantizedLinearLayer& layer, std::span<const std::int8_t> x);

std::vector<std::int8_t> int_relu(std::span<const std::int8_t> a, std::int32_t zero_point);

// The integer core: int8 sensor codes in, int8 output code out.
std::int8_t int_forward_codes(const QuantizedMlp& m, std::span<const std::int8_t> x_q);

struct IntPrediction {
  std::int32_t y_q = 0;
  double y = 0.0;
};

// Quantize -> integer core -> dequantize. `x` is in normalized units.
IntPrediction int_forward(const QuantizedMlp& m, std::span<const double> x);

// De-normalized predictions for raw (un-normalized) sensor rows.
std::vector<double> int_predict_raw(const QuantizedMlp& m, const Matrix<double>& raw_inputs);

double evaluate_denormalized(const QuantizedMlp& m, const Dataset& test, const NormStats& stats);

}  // namespace qmlp
