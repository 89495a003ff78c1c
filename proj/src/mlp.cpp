#include "qmlp/mlp.hpp"

namespace qmlp {

MlpModel MlpModel::zeros(std::size_t inputs, std::size_t hidden) {
  return {Matrix<double>(hidden, inputs), std::vector<double>(hidden), std::vector<double>(hidden),
          std::vector<double>(1)};
}

MlpModel init_model(std::size_t inputs, std::size_t hidden, std::uint64_t seed) {
  if (inputs == 0 || hidden == 0) throw Error(ErrorCode::invalid_argument, "model needs D >= 1 and H >= 1");
  MlpModel m = MlpModel::zeros(inputs, hidden);
  std::mt19937_64 rng(seed);
  const double bound1 = std::sqrt(1.0 / static_cast<double>(inputs));
  const double bound2 = std::sqrt(1.0 / static_cast<double>(hidden));
  std::uniform_real_distribution<double> u1(-bound1, bound1);
  std::uniform_real_distribution<double> u2(-bound2, bound2);
  for (double& w : m.w1.flat()) w = u1(rng);
  for (double& w : m.w2) w = u2(rng);
  return m;
}

double forward(const MlpModel& m, std::span<const double> x) {
  double y = m.b2[0];
  for (std::size_t j = 0; j < m.hidden(); ++j) {
    const auto w = m.w1.row(j);
    double z = m.b1[j];
    for (std::size_t k = 0; k < w.size(); ++k) z += w[k] * x[k];
    if (z > 0.0) y += m.w2[j] * z;
  }
  return y;
}

std::vector<double> predict(const MlpModel& m, const Matrix<double>& x) {
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = forward(m, x.row(r));
  return out;
}

LossGradient backward(const MlpModel& m, const Batch& batch) {
  if (batch.size() == 0) throw Error(ErrorCode::invalid_argument, "backward needs a non-empty batch");
  const std::size_t hidden = m.hidden();
  LossGradient out{0.0, MlpModel::zeros(m.inputs(), hidden)};
  auto& g = out.grad;
  std::vector<double> z(hidden);
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto x = batch.input(i);
    double y = m.b2[0];
    for (std::size_t j = 0; j < hidden; ++j) {
      const auto w = m.w1.row(j);
      double s = m.b1[j];
      for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * x[k];
      z[j] = s;
      if (s > 0.0) y += m.w2[j] * s;
    }
    const double residual = y - batch.target(i);
    out.loss += residual * residual * inv_n;
    const double dy = 2.0 * residual * inv_n;
    g.b2[0] += dy;
    for (std::size_t j = 0; j < hidden; ++j) {
      if (z[j] <= 0.0) continue;
      g.w2[j] += dy * z[j];
      const double dz = dy * m.w2[j];
      g.b1[j] += dz;
      auto gw = g.w1.row(j);
      for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += dz * x[k];
    }
  }
  return out;
}

double mse(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw Error(ErrorCode::dimension_mismatch, "mse: " + std::to_string(pred.size()) + " predictions vs " +
                                                   std::to_string(target.size()) + " targets");
  }
  if (pred.empty()) throw Error(ErrorCode::invalid_argument, "mse of an empty vector");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - target[i];
    acc += r * r;
  }
  return acc / static_cast<double>(pred.size());
}

double evaluate_denormalized(const MlpModel& m, const Dataset& test, const NormStats& stats) {
  const auto pred = denormalize(predict(m, test.inputs), stats);
  const auto truth = denormalize(test.targets, stats);
  return mse(pred, truth);
}

void TrainConfig::validate() const {
  const auto open_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!open_unit(beta1) || !open_unit(beta2)) throw Error(ErrorCode::invalid_argument, "Adam betas must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw Error(ErrorCode::invalid_argument, "Adam epsilon must be > 0");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::invalid_argument, "learning rate must be > 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw Error(ErrorCode::invalid_argument, "decay factor must lie in (0, 1]");
  if (step_size < 1) throw Error(ErrorCode::invalid_argument, "scheduler step size must be >= 1");
  if (max_epochs < 1) throw Error(ErrorCode::invalid_argument, "max epochs must be >= 1");
  if (patience < 0) throw Error(ErrorCode::invalid_argument, "patience must be >= 0");
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  const auto decays = static_cast<double>(epoch / static_cast<std::size_t>(cfg.step_size));
  return cfg.learning_rate * std::pow(cfg.gamma, decays);
}

Adam::Adam(const TrainConfig& cfg, std::size_t parameter_count)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), epsilon_(cfg.epsilon), m_(parameter_count), v_(parameter_count) {}

void Adam::step(MlpModel& params, const MlpModel& grad, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p_tensors = params.tensors();
  const auto g_tensors = grad.tensors();
  std::size_t offset = 0;
  for (std::size_t t = 0; t < p_tensors.size(); ++t) {
    auto p = p_tensors[t];
    const auto g = g_tensors[t];
    for (std::size_t i = 0; i < p.size(); ++i, ++offset) {
      m_[offset] = beta1_ * m_[offset] + (1.0 - beta1_) * g[i];
      v_[offset] = beta2_ * v_[offset] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = m_[offset] / c1;
      const double v_hat = v_[offset] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + epsilon_);
    }
  }
}

double FloatMlp::loss_and_gradient(const Batch& batch, MlpModel& grad) {
  auto lg = backward(model_, batch);
  grad = std::move(lg.grad);
  return lg.loss;
}

double FloatMlp::loss(const Dataset& ds) const { return mse(predict(model_, ds.inputs), ds.targets); }

TrainResult train(MlpModel initial, const Dataset& train_set, const Dataset& validation_set, const TrainConfig& cfg) {
  FloatMlp net(std::move(initial));
  auto history = fit(net, train_set, validation_set, cfg);
  return {net.model(), std::move(history)};
}

}  // namespace qmlp
