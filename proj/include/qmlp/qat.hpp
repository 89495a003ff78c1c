#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qmlp/datakit.hpp"
#include "qmlp/mlp.hpp"
#include "qmlp/quant.hpp"

namespace qmlp {

enum class SchemeKind { affine, fixed_point };

struct QuantScheme {
  SchemeKind kind = SchemeKind::affine;
  int bits = 8;                 // affine width
  FixedPointFormat format{};    // used when kind == fixed_point

  static QuantScheme affine(int bits = 8) { return {SchemeKind::affine, bits, {}}; }
  static QuantScheme fixed(int frac_bits = 6, int total_bits = 8) {
    return {SchemeKind::fixed_point, total_bits, {frac_bits, total_bits}};
  }

  // 'L' for adaptive affine, 'F' for fixed point.
  [[nodiscard]] char code() const noexcept { return kind == SchemeKind::affine ? 'L' : 'F'; }
  [[nodiscard]] int width() const noexcept { return kind == SchemeKind::affine ? bits : format.total_bits; }

  friend bool operator==(const QuantScheme&, const QuantScheme&) = default;
};

// Scheme of the hidden layer (X, W1, B1, A1) and of the output layer (W2, B2, Y).
struct SchemePair {
  QuantScheme hidden = QuantScheme::affine();
  QuantScheme output = QuantScheme::affine();

  [[nodiscard]] std::string label() const { return {hidden.code(), '/', output.code()}; }
  // Parses "L/L", "L/F", "F/L" or "F/F" (reference 8-bit affine / (6,8) fixed point).
  static SchemePair parse(const std::string& label);

  friend bool operator==(const SchemePair&, const SchemePair&) = default;
};

enum class QuantObject { x, w1, b1, a1, a2, w2, b2, y };

const char* to_string(QuantObject obj) noexcept;

struct QuantEntry {
  QuantScheme scheme;
  ObserverState observer;
  QuantParams params;

  friend bool operator==(const QuantEntry&, const QuantEntry&) = default;
};

// One entry per quantization object. The ReLU output and the output-layer
// input (A2) have no storage of their own and resolve to the A1 entry.
class QuantObjectTable {
public:
  QuantObjectTable() = default;
  explicit QuantObjectTable(const SchemePair& schemes);

  QuantEntry& at(QuantObject obj) noexcept { return entries_[slot(obj)]; }
  [[nodiscard]] const QuantEntry& at(QuantObject obj) const noexcept { return entries_[slot(obj)]; }
  [[nodiscard]] const QuantParams& params(QuantObject obj) const noexcept { return at(obj).params; }

  friend bool operator==(const QuantObjectTable&, const QuantObjectTable&) = default;

private:
  static std::size_t slot(QuantObject obj) noexcept;

  std::array<QuantEntry, 7> entries_{};
};

// dequantize(quantize(x)) elementwise.
double fake_quant(double x, const QuantParams& qp) noexcept;
std::vector<double> fake_quant(std::span<const double> x, const QuantParams& qp);

// Clipped straight-through mask: true on [dequantize(q_min), dequantize(q_max)].
bool ste_pass(double x, const QuantParams& qp) noexcept;
std::vector<double> ste_backward(std::span<const double> grad, std::span<const double> x, const QuantParams& qp);

// Float master weights trained through simulated quantization. Weight and
// bias parameters follow the current weights; activation parameters come
// from EMA range observers updated in training mode only.
class QatModel {
public:
  QatModel(MlpModel weights, const SchemePair& schemes);

  MlpModel& parameters() noexcept { return weights_; }
  [[nodiscard]] const MlpModel& weights() const noexcept { return weights_; }
  [[nodiscard]] const SchemePair& schemes() const noexcept { return schemes_; }
  [[nodiscard]] const QuantObjectTable& table() const noexcept { return table_; }
  [[nodiscard]] bool frozen() const noexcept { return frozen_; }

  // Training-mode pass: updates observers, recomputes all parameters, returns
  // the batch MSE and writes straight-through gradients into `grad`.
  double loss_and_gradient(const Batch& batch, MlpModel& grad);
  // Training-mode forward without gradients; feeds the observers only.
  void observe(const Batch& batch);

  // Evaluation mode: observers are left untouched.
  [[nodiscard]] double forward(std::span<const double> x) const;
  [[nodiscard]] std::vector<double> predict(const Matrix<double>& x) const;
  [[nodiscard]] double loss(const Dataset& ds) const;

  // Fixes every parameter from the current weights and observer states.
  void freeze();
  // Parameters evaluation mode would use right now.
  [[nodiscard]] QuantObjectTable resolved() const;

private:
  double run_batch(const Batch& batch, MlpModel* grad);

  MlpModel weights_;
  SchemePair schemes_;
  QuantObjectTable table_;
  bool frozen_ = false;
};

double qat_forward(const QatModel& m, std::span<const double> x);

struct QatResult {
  QatModel model;
  TrainHistory history;
};

// Trains an H-unit model with fake quantization; the returned model holds the
// best-validation weights with every parameter frozen.
QatResult qat_train(const Dataset& train_set, const Dataset& validation_set, std::size_t hidden,
                    const SchemePair& schemes, const TrainConfig& cfg);

double evaluate_denormalized(const QatModel& m, const Dataset& test, const NormStats& stats);

}  // namespace qmlp
