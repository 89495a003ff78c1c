#include "qmlp/qat.hpp"

#include <algorithm>
#include <cmath>

#include "qmlp/error.hpp"

namespace qmlp {

namespace {

QuantParams weight_params(const QuantScheme& scheme, std::span<const double> w) {
  if (scheme.kind == SchemeKind::fixed_point) return fixed_point_params(scheme.format);
  const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
  return affine_params(*lo, *hi, scheme.bits);
}

QuantParams bias_params(const QuantScheme& scheme, std::span<const double> b) {
  if (scheme.kind == SchemeKind::fixed_point) return fixed_point_params(scheme.format);
  const auto [lo, hi] = std::minmax_element(b.begin(), b.end());
  return symmetric_params(*lo, *hi, scheme.bits);
}

QuantParams activation_params(const QuantEntry& entry) {
  if (entry.scheme.kind == SchemeKind::fixed_point) return fixed_point_params(entry.scheme.format);
  return compute_affine_params(entry.observer, entry.scheme.bits);
}

void observe_into(QuantEntry& entry, std::span<const double> values) {
  if (entry.scheme.kind == SchemeKind::affine) entry.observer = update_observer(entry.observer, values);
  entry.params = activation_params(entry);
}

void refresh_weight_params(QuantObjectTable& t, const MlpModel& m) {
  t.at(QuantObject::w1).params = weight_params(t.at(QuantObject::w1).scheme, m.w1.flat());
  t.at(QuantObject::b1).params = bias_params(t.at(QuantObject::b1).scheme, m.b1);
  t.at(QuantObject::w2).params = weight_params(t.at(QuantObject::w2).scheme, m.w2);
  t.at(QuantObject::b2).params = bias_params(t.at(QuantObject::b2).scheme, m.b2);
}

// Weights snapped to their grids together with the activation parameters,
// ready for repeated evaluation-mode passes.
struct FakeQuantNet {
  Matrix<double> w1;
  std::vector<double> b1;
  std::vector<double> w2;
  double b2 = 0.0;
  QuantParams x;
  QuantParams a1;
  QuantParams y;

  FakeQuantNet(const MlpModel& m, const QuantObjectTable& t)
      : w1(m.hidden(), m.inputs(), fake_quant(m.w1.flat(), t.params(QuantObject::w1))),
        b1(fake_quant(m.b1, t.params(QuantObject::b1))),
        w2(fake_quant(m.w2, t.params(QuantObject::w2))),
        b2(fake_quant(m.b2[0], t.params(QuantObject::b2))),
        x(t.params(QuantObject::x)),
        a1(t.params(QuantObject::a1)),
        y(t.params(QuantObject::y)) {}

  double operator()(std::span<const double> input, std::vector<double>& xq) const {
    for (std::size_t k = 0; k < input.size(); ++k) xq[k] = fake_quant(input[k], x);
    double out = b2;
    for (std::size_t j = 0; j < w1.rows(); ++j) {
      const auto w = w1.row(j);
      double z = b1[j];
      for (std::size_t k = 0; k < w.size(); ++k) z += w[k] * xq[k];
      const double a = fake_quant(z, a1);
      if (a > 0.0) out += w2[j] * a;
    }
    return fake_quant(out, y);
  }
};

}  // namespace

SchemePair SchemePair::parse(const std::string& label) {
  const auto scheme = [&](char c) {
    if (c == 'L') return QuantScheme::affine();
    if (c == 'F') return QuantScheme::fixed();
    throw Error(ErrorCode::invalid_argument, "unknown scheme pair '" + label + "' (expected e.g. L/F)");
  };
  if (label.size() != 3 || label[1] != '/') {
    throw Error(ErrorCode::invalid_argument, "unknown scheme pair '" + label + "' (expected e.g. L/F)");
  }
  return {scheme(label[0]), scheme(label[2])};
}

const char* to_string(QuantObject obj) noexcept {
  switch (obj) {
    case QuantObject::x: return "X";
    case QuantObject::w1: return "W1";
    case QuantObject::b1: return "B1";
    case QuantObject::a1: return "A1";
    case QuantObject::a2: return "A2";
    case QuantObject::w2: return "W2";
    case QuantObject::b2: return "B2";
    case QuantObject::y: return "Y";
  }
  return "?";
}

QuantObjectTable::QuantObjectTable(const SchemePair& schemes) {
  for (const auto obj : {QuantObject::x, QuantObject::w1, QuantObject::b1, QuantObject::a1}) {
    at(obj).scheme = schemes.hidden;
  }
  for (const auto obj : {QuantObject::w2, QuantObject::b2, QuantObject::y}) at(obj).scheme = schemes.output;
  for (auto& e : entries_) {
    if (e.scheme.kind == SchemeKind::fixed_point) e.params = fixed_point_params(e.scheme.format);
  }
}

std::size_t QuantObjectTable::slot(QuantObject obj) noexcept {
  switch (obj) {
    case QuantObject::x: return 0;
    case QuantObject::w1: return 1;
    case QuantObject::b1: return 2;
    case QuantObject::a1:
    case QuantObject::a2: return 3;
    case QuantObject::w2: return 4;
    case QuantObject::b2: return 5;
    case QuantObject::y: return 6;
  }
  return 0;
}

double fake_quant(double x, const QuantParams& qp) noexcept { return dequantize(quantize(x, qp), qp); }

std::vector<double> fake_quant(std::span<const double> x, const QuantParams& qp) {
  std::vector<double> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [&](double v) { return fake_quant(v, qp); });
  return out;
}

bool ste_pass(double x, const QuantParams& qp) noexcept {
  return x >= dequantize(qp.q_min, qp) && x <= dequantize(qp.q_max, qp);
}

std::vector<double> ste_backward(std::span<const double> grad, std::span<const double> x, const QuantParams& qp) {
  if (grad.size() != x.size()) throw Error(ErrorCode::dimension_mismatch, "ste_backward: gradient and input sizes differ");
  std::vector<double> out(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) out[i] = ste_pass(x[i], qp) ? grad[i] : 0.0;
  return out;
}

QatModel::QatModel(MlpModel weights, const SchemePair& schemes)
    : weights_(std::move(weights)), schemes_(schemes), table_(schemes) {
  refresh_weight_params(table_, weights_);
}

double QatModel::run_batch(const Batch& batch, MlpModel* grad) {
  if (batch.size() == 0) throw Error(ErrorCode::invalid_argument, "QAT pass over an empty batch");
  if (frozen_) throw Error(ErrorCode::invalid_argument, "QAT model is frozen; training-mode passes are not allowed");
  const std::size_t n = batch.size();
  const std::size_t inputs = weights_.inputs();
  const std::size_t hidden = weights_.hidden();

  refresh_weight_params(table_, weights_);
  const auto& pw1 = table_.params(QuantObject::w1);
  const auto& pb1 = table_.params(QuantObject::b1);
  const auto& pw2 = table_.params(QuantObject::w2);
  const auto& pb2 = table_.params(QuantObject::b2);
  const auto w1 = fake_quant(weights_.w1.flat(), pw1);
  const auto b1 = fake_quant(weights_.b1, pb1);
  const auto w2 = fake_quant(weights_.w2, pw2);
  const double b2 = fake_quant(weights_.b2[0], pb2);

  std::vector<double> x(n * inputs);
  for (std::size_t i = 0; i < n; ++i) std::ranges::copy(batch.input(i), x.begin() + static_cast<std::ptrdiff_t>(i * inputs));
  observe_into(table_.at(QuantObject::x), x);
  const auto& px = table_.params(QuantObject::x);
  for (double& v : x) v = fake_quant(v, px);

  std::vector<double> z(n * hidden);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < hidden; ++j) {
      double s = b1[j];
      for (std::size_t k = 0; k < inputs; ++k) s += w1[j * inputs + k] * x[i * inputs + k];
      z[i * hidden + j] = s;
    }
  }
  observe_into(table_.at(QuantObject::a1), z);
  const auto& pa = table_.params(QuantObject::a1);

  std::vector<double> act(n * hidden);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b2;
    for (std::size_t j = 0; j < hidden; ++j) {
      const double a = std::max(0.0, fake_quant(z[i * hidden + j], pa));
      act[i * hidden + j] = a;
      s += w2[j] * a;
    }
    y[i] = s;
  }
  observe_into(table_.at(QuantObject::y), y);
  const auto& py = table_.params(QuantObject::y);

  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  std::vector<double> dy(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = fake_quant(y[i], py) - batch.target(i);
    loss += r * r * inv_n;
    dy[i] = ste_pass(y[i], py) ? 2.0 * r * inv_n : 0.0;
  }
  if (grad == nullptr) return loss;

  MlpModel& g = *grad;
  g = MlpModel::zeros(inputs, hidden);
  for (std::size_t i = 0; i < n; ++i) {
    if (dy[i] == 0.0) continue;
    g.b2[0] += dy[i];
    for (std::size_t j = 0; j < hidden; ++j) {
      const double a = act[i * hidden + j];
      g.w2[j] += dy[i] * a;
      if (a <= 0.0 || !ste_pass(z[i * hidden + j], pa)) continue;
      const double dz = dy[i] * w2[j];
      g.b1[j] += dz;
      auto gw = g.w1.row(j);
      for (std::size_t k = 0; k < inputs; ++k) gw[k] += dz * x[i * inputs + k];
    }
  }
  // Straight-through masks on the master weights.
  const auto mask = [](std::span<double> gt, std::span<const double> wt, const QuantParams& qp) {
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (!ste_pass(wt[i], qp)) gt[i] = 0.0;
    }
  };
  mask(g.w1.flat(), weights_.w1.flat(), pw1);
  mask(g.b1, weights_.b1, pb1);
  mask(g.w2, weights_.w2, pw2);
  mask(g.b2, weights_.b2, pb2);
  return loss;
}

double QatModel::loss_and_gradient(const Batch& batch, MlpModel& grad) { return run_batch(batch, &grad); }

void QatModel::observe(const Batch& batch) { run_batch(batch, nullptr); }

QuantObjectTable QatModel::resolved() const {
  if (frozen_) return table_;
  QuantObjectTable t = table_;
  refresh_weight_params(t, weights_);
  for (const auto obj : {QuantObject::x, QuantObject::a1, QuantObject::y}) t.at(obj).params = activation_params(t.at(obj));
  return t;
}

double QatModel::forward(std::span<const double> x) const {
  if (x.size() != weights_.inputs()) {
    throw Error(ErrorCode::dimension_mismatch, "QAT forward expects " + std::to_string(weights_.inputs()) + " inputs");
  }
  const FakeQuantNet net(weights_, resolved());
  std::vector<double> xq(x.size());
  return net(x, xq);
}

std::vector<double> QatModel::predict(const Matrix<double>& x) const {
  const FakeQuantNet net(weights_, resolved());
  std::vector<double> xq(x.cols());
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = net(x.row(r), xq);
  return out;
}

double QatModel::loss(const Dataset& ds) const { return mse(predict(ds.inputs), ds.targets); }

void QatModel::freeze() {
  table_ = resolved();
  frozen_ = true;
}

double qat_forward(const QatModel& m, std::span<const double> x) { return m.forward(x); }

QatResult qat_train(const Dataset& train_set, const Dataset& validation_set, std::size_t hidden,
                    const SchemePair& schemes, const TrainConfig& cfg) {
  QatModel model(init_model(train_set.features(), hidden, cfg.seed), schemes);
  auto history = fit(model, train_set, validation_set, cfg);
  model.freeze();
  return {std::move(model), std::move(history)};
}

double evaluate_denormalized(const QatModel& m, const Dataset& test, const NormStats& stats) {
  const auto pred = denormalize(m.predict(test.inputs), stats);
  const auto truth = denormalize(test.targets, stats);
  return mse(pred, truth);
}

}  // namespace qmlp
