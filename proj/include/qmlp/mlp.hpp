#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qmlp/datakit.hpp"
#include "qmlp/error.hpp"
#include "qmlp/matrix.hpp"

namespace qmlp {

// One hidden ReLU layer and a scalar linear output:
//   y = W2 . relu(W1 x + B1) + B2
struct MlpModel {
  Matrix<double> w1;        // H x D
  std::vector<double> b1;   // H
  std::vector<double> w2;   // 1 x H, stored flat
  std::vector<double> b2;   // 1

  static MlpModel zeros(std::size_t inputs, std::size_t hidden);

  [[nodiscard]] std::size_t inputs() const noexcept { return w1.cols(); }
  [[nodiscard]] std::size_t hidden() const noexcept { return w1.rows(); }
  [[nodiscard]] std::size_t parameter_count() const noexcept {
    return w1.size() + b1.size() + w2.size() + b2.size();
  }

  [[nodiscard]] std::array<std::span<double>, 4> tensors() noexcept { return {w1.flat(), b1, w2, b2}; }
  [[nodiscard]] std::array<std::span<const double>, 4> tensors() const noexcept {
    return {w1.flat(), b1, w2, b2};
  }

  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

// Uniform in +-sqrt(1/fan_in) per layer, zero biases.
MlpModel init_model(std::size_t inputs, std::size_t hidden, std::uint64_t seed);

double forward(const MlpModel& m, std::span<const double> x);
std::vector<double> predict(const MlpModel& m, const Matrix<double>& x);

// A view of selected dataset rows; no copies.
class Batch {
public:
  explicit Batch(const Dataset& ds) : ds_(&ds), count_(ds.rows()) {}
  Batch(const Dataset& ds, std::span<const std::size_t> rows) : ds_(&ds), rows_(rows), count_(rows.size()) {}

  [[nodiscard]] std::size_t size() const noexcept { return count_; }
  [[nodiscard]] std::size_t features() const noexcept { return ds_->features(); }
  [[nodiscard]] std::span<const double> input(std::size_t i) const noexcept { return ds_->inputs.row(index(i)); }
  [[nodiscard]] double target(std::size_t i) const noexcept { return ds_->targets[index(i)]; }

private:
  [[nodiscard]] std::size_t index(std::size_t i) const noexcept { return rows_.empty() ? i : rows_[i]; }

  const Dataset* ds_;
  std::span<const std::size_t> rows_;
  std::size_t count_;
};

struct LossGradient {
  double loss = 0.0;
  MlpModel grad;
};

// Mean squared error over the batch and its exact gradient.
LossGradient backward(const MlpModel& m, const Batch& batch);

double mse(std::span<const double> pred, std::span<const double> target);

// MSE after mapping predictions and targets back to physical units.
double evaluate_denormalized(const MlpModel& m, const Dataset& test, const NormStats& stats);

struct TrainConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  double learning_rate = 1e-3;
  int step_size = 3;
  double gamma = 0.5;
  int max_epochs = 500;
  int patience = 20;
  std::size_t batch_size = 4;  // 0 means full batch
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  [[nodiscard]] std::size_t epochs() const noexcept { return train_loss.size(); }
};

// lr0 * gamma^floor(epoch / step_size), epochs counted from 0.
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

class Adam {
public:
  Adam(const TrainConfig& cfg, std::size_t parameter_count);

  void step(MlpModel& params, const MlpModel& grad, double lr);

private:
  double beta1_;
  double beta2_;
  double epsilon_;
  std::uint64_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

// Anything fit() can optimize: float master parameters, a training-mode
// loss/gradient (which may update internal state such as range observers)
// and an evaluation-mode loss. Copies are taken as best-epoch snapshots.
template <class T>
concept Trainable = std::copyable<T> && requires(T model, const T cmodel, const Batch& batch, MlpModel& grad,
                                                 const Dataset& ds) {
  { model.parameters() } -> std::same_as<MlpModel&>;
  { model.loss_and_gradient(batch, grad) } -> std::convertible_to<double>;
  { cmodel.loss(ds) } -> std::convertible_to<double>;
};

// Mini-batch Adam with a step learning-rate schedule and early stopping on
// validation loss. On return `model` holds the best-validation snapshot.
template <Trainable T>
TrainHistory fit(T& model, const Dataset& train, const Dataset& validation, const TrainConfig& cfg) {
  cfg.validate();
  train.validate();
  validation.validate();

  TrainHistory history;
  Adam adam(cfg, model.parameters().parameter_count());
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch_size = cfg.batch_size == 0 ? train.rows() : std::min(cfg.batch_size, train.rows());

  MlpModel grad = MlpModel::zeros(model.parameters().inputs(), model.parameters().hidden());
  T best = model;
  double best_loss = std::numeric_limits<double>::infinity();
  int stale = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = learning_rate(cfg, static_cast<std::size_t>(epoch));
    if (batch_size < train.rows()) std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t count = std::min(batch_size, order.size() - start);
      const Batch batch(train, std::span<const std::size_t>(order).subspan(start, count));
      const double loss = model.loss_and_gradient(batch, grad);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::divergence, "training loss became non-finite in epoch " + std::to_string(epoch));
      }
      epoch_loss += loss * static_cast<double>(count);
      adam.step(model.parameters(), grad, lr);
    }
    history.train_loss.push_back(epoch_loss / static_cast<double>(train.rows()));

    const double val = model.loss(validation);
    if (!std::isfinite(val)) {
      throw Error(ErrorCode::divergence, "validation loss became non-finite in epoch " + std::to_string(epoch));
    }
    history.validation_loss.push_back(val);
    if (val < best_loss) {
      best_loss = val;
      best = model;
      history.best_epoch = static_cast<std::size_t>(epoch);
      stale = 0;
    } else if (++stale >= cfg.patience) {
      history.stopped_early = true;
      break;
    }
  }
  model = std::move(best);
  return history;
}

// Float-precision network adapter for fit().
class FloatMlp {
public:
  explicit FloatMlp(MlpModel m) : model_(std::move(m)) {}

  MlpModel& parameters() noexcept { return model_; }
  [[nodiscard]] const MlpModel& model() const noexcept { return model_; }
  double loss_and_gradient(const Batch& batch, MlpModel& grad);
  [[nodiscard]] double loss(const Dataset& ds) const;

private:
  MlpModel model_;
};

struct TrainResult {
  MlpModel model;
  TrainHistory history;
};

TrainResult train(MlpModel initial, const Dataset& train_set, const Dataset& validation_set, const TrainConfig& cfg);

}  // namespace qmlp
