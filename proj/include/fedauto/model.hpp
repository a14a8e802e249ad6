#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedauto/data.hpp"

namespace fedauto {

/// Linear(d -> C) softmax classifier or a one-hidden-layer ReLU MLP(d -> h -> C).
struct Arch {
  enum class Kind { Linear, Mlp };

  Kind kind = Kind::Linear;
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  int num_classes = 0;

  static Arch linear(std::size_t input_dim, int num_classes);
  static Arch mlp(std::size_t input_dim, std::size_t hidden, int num_classes);

  /// Flat layout: Linear is W (C x d, row-major) then b (C). Mlp is W1 (h x d),
  /// b1 (h), W2 (C x h), b2 (C).
  std::size_t parameter_count() const noexcept;

  bool operator==(const Arch&) const = default;
};

struct ModelParams {
  Arch arch;
  std::vector<double> theta;

  std::size_t size() const noexcept { return theta.size(); }
  bool operator==(const ModelParams&) const = default;
};

/// Weights uniform in +-1/sqrt(fan_in), biases zero.
ModelParams init_model(const Arch& arch, std::uint64_t seed);

struct LossGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Mean softmax cross-entropy over `batch` and its exact gradient.
LossGradient loss_and_gradient(const ModelParams& model, const LabeledDataset& data,
                               std::span<const std::size_t> batch);

/// Same over every sample of `data`.
LossGradient loss_and_gradient(const ModelParams& model, const LabeledDataset& data);

/// Logits for one input row.
std::vector<double> predict_logits(const ModelParams& model, std::span<const double> x);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean cross-entropy and argmax accuracy; ties go to the lowest class index.
Evaluation evaluate(const ModelParams& model, const LabeledDataset& data);

}  // namespace fedauto
