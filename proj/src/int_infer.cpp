#include "qmlp/int_infer.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "qmlp/error.hpp"
#include "qmlp/mlp.hpp"
#include "qmlp/qat.hpp"

namespace qmlp {

namespace {

constexpr std::int64_t acc_min = std::numeric_limits<std::int32_t>::min();
constexpr std::int64_t acc_max = std::numeric_limits<std::int32_t>::max();

QuantizedLinearLayer make_layer(const Matrix<double>& w, std::span<const double> b, const QuantParams& in,
                                const QuantParams& pw, const QuantParams& pb, const QuantParams& out) {
  for (const auto* qp : {&in, &pw, &out}) {
    if (qp->bits != 8) throw Error(ErrorCode::conversion, "integer conversion supports 8-bit tensors only");
  }
  QuantizedLinearLayer layer;
  layer.rows = w.rows();
  layer.cols = w.cols();
  layer.weights.reserve(w.size());
  for (const double v : w.flat()) layer.weights.push_back(static_cast<std::int8_t>(quantize(v, pw)));
  layer.weight_zero = pw.zero_point;
  // The grid-snapped bias S_B * B_q is re-expressed on the accumulator scale S_in * S_W.
  layer.bias = quantize_bias(fake_quant(b, pb), in.scale, pw.scale);
  layer.input_zero = in.zero_point;
  layer.output_zero = out.zero_point;
  layer.requant = approximate_multiplier(in.scale * pw.scale / out.scale);
  layer.output_min = static_cast<std::int32_t>(out.q_min);
  layer.output_max = static_cast<std::int32_t>(out.q_max);
  return layer;
}

}  // namespace

void QuantizedLinearLayer::validate() const {
  const auto fail = [](const std::string& what) { throw Error(ErrorCode::package_malformed, what); };
  if (rows == 0 || cols == 0) fail("layer has an empty dimension");
  if (weights.size() != rows * cols) fail("weight count does not match layer shape");
  if (bias.size() != rows) fail("bias count does not match layer rows");
  const auto int8 = [](std::int64_t v) { return v >= -128 && v <= 127; };
  if (!int8(weight_zero) || !int8(input_zero) || !int8(output_zero)) fail("zero point outside int8 range");
  if (output_min > output_max || !int8(output_min) || !int8(output_max)) fail("bad output clamp range");
  if (requant.m0 < (1u << 30) || requant.m0 > 0x7fffffffu) fail("M0 outside [2^30, 2^31)");
  if (requant.shift < 0 || requant.shift > 62) fail("shift outside [0, 62]");
}

void QuantizedMlp::validate() const {
  hidden.validate();
  output.validate();
  if (output.rows != 1) throw Error(ErrorCode::package_malformed, "output layer must have one row");
  if (output.cols != hidden.rows) throw Error(ErrorCode::package_malformed, "layer shapes do not chain");
  if (hidden.output_zero != relu_zero || output.input_zero != relu_zero) {
    throw Error(ErrorCode::package_malformed, "hidden output / output input zero points must equal the ReLU zero point");
  }
  if (input_params.zero_point != hidden.input_zero || output_params.zero_point != output.output_zero) {
    throw Error(ErrorCode::package_malformed, "input/output zero points disagree with the layers");
  }
  if (norm.inputs.size() != hidden.cols) throw Error(ErrorCode::package_malformed, "normalization stats do not match input width");
}

QuantizedMlp convert(const QatModel& m, const NormStats& norm) {
  if (!m.frozen()) throw Error(ErrorCode::conversion, "convert needs a frozen QAT model");
  const auto& t = m.table();
  const auto& w = m.weights();
  const auto& px = t.params(QuantObject::x);
  const auto& pa = t.params(QuantObject::a1);
  const auto& py = t.params(QuantObject::y);

  QuantizedMlp q;
  q.hidden = make_layer(w.w1, w.b1, px, t.params(QuantObject::w1), t.params(QuantObject::b1), pa);
  q.relu_zero = pa.zero_point;
  q.output = make_layer(Matrix<double>(1, w.hidden(), w.w2), w.b2, t.params(QuantObject::a2),
                        t.params(QuantObject::w2), t.params(QuantObject::b2), py);
  q.input_params = px;
  q.output_params = py;
  q.norm = norm;
  q.validate();
  return q;
}

QuantizedMlp convert(const QatModel& m) { return convert(m, NormStats::identity(m.weights().inputs())); }

std::int64_t requantize(std::int64_t acc, const RequantMultiplier& rq) noexcept {
  const std::int64_t half = rq.shift > 0 ? std::int64_t{1} << (rq.shift - 1) : 0;
  return (acc * static_cast<std::int64_t>(rq.m0) + half) >> rq.shift;
}

std::vector<std::int8_t> int_linear(const QuantizedLinearLayer& layer, std::span<const std::int8_t> x) {
  if (x.size() != layer.cols) {
    throw Error(ErrorCode::dimension_mismatch,
                "layer expects " + std::to_string(layer.cols) + " inputs, got " + std::to_string(x.size()));
  }
  std::vector<std::int8_t> out(layer.rows);
  for (std::size_t j = 0; j < layer.rows; ++j) {
    std::int64_t acc = layer.bias[j];
    for (std::size_t k = 0; k < layer.cols; ++k) {
      acc += static_cast<std::int64_t>(x[k] - layer.input_zero) * (layer.weight(j, k) - layer.weight_zero);
      if (acc < acc_min || acc > acc_max) {
        throw Error(ErrorCode::overflow, "32-bit accumulator overflow in row " + std::to_string(j));
      }
    }
    const std::int64_t y = requantize(acc, layer.requant) + layer.output_zero;
    out[j] = static_cast<std::int8_t>(std::clamp<std::int64_t>(y, layer.output_min, layer.output_max));
  }
  return out;
}

std::vector<std::int8_t> int_relu(std::span<const std::int8_t> a, std::int32_t zero_point) {
  std::vector<std::int8_t> out(a.size());
  std::transform(a.begin(), a.end(), out.begin(), [&](std::int8_t v) {
    return static_cast<std::int8_t>(std::max<std::int32_t>(v, zero_point));
  });
  return out;
}

std::int8_t int_forward_codes(const QuantizedMlp& m, std::span<const std::int8_t> x_q) {
  const auto hidden = int_linear(m.hidden, x_q);
  const auto act = int_relu(hidden, m.relu_zero);
  return int_linear(m.output, act)[0];
}

IntPrediction int_forward(const QuantizedMlp& m, std::span<const double> x) {
  if (x.size() != m.inputs()) {
    throw Error(ErrorCode::dimension_mismatch,
                "model expects D=" + std::to_string(m.inputs()) + " inputs, got " + std::to_string(x.size()));
  }
  std::vector<std::int8_t> codes(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) codes[k] = static_cast<std::int8_t>(quantize(x[k], m.input_params));
  const std::int32_t y_q = int_forward_codes(m, codes);
  return {y_q, dequantize(y_q, m.output_params)};
}

std::vector<double> int_predict_raw(const QuantizedMlp& m, const Matrix<double>& raw_inputs) {
  if (raw_inputs.cols() != m.inputs()) {
    throw Error(ErrorCode::dimension_mismatch, "model expects D=" + std::to_string(m.inputs()) + " input columns, got " +
                                                   std::to_string(raw_inputs.cols()));
  }
  std::vector<double> out(raw_inputs.rows());
  std::vector<double> x(m.inputs());
  for (std::size_t r = 0; r < raw_inputs.rows(); ++r) {
    const auto row = raw_inputs.row(r);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = normalize_value(row[k], m.norm.inputs[k]);
    out[r] = denormalize_value(int_forward(m, x).y, m.norm.target);
  }
  return out;
}

double evaluate_denormalized(const QuantizedMlp& m, const Dataset& test, const NormStats& stats) {
  std::vector<double> pred(test.rows());
  for (std::size_t r = 0; r < test.rows(); ++r) pred[r] = int_forward(m, test.inputs.row(r)).y;
  return mse(denormalize(pred, stats), denormalize(test.targets, stats));
}

}  // namespace qmlp
