#include "fedauto/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedauto/errors.hpp"
#include "fedauto/rng.hpp"

namespace fedauto {

Arch Arch::linear(std::size_t input_dim, int num_classes) {
  if (input_dim == 0 || num_classes < 2) throw ParameterError("linear model needs d >= 1, C >= 2");
  return {Kind::Linear, input_dim, 0, num_classes};
}

Arch Arch::mlp(std::size_t input_dim, std::size_t hidden, int num_classes) {
  if (input_dim == 0 || hidden == 0 || num_classes < 2) {
    throw ParameterError("mlp needs d >= 1, h >= 1, C >= 2");
  }
  return {Kind::Mlp, input_dim, hidden, num_classes};
}

std::size_t Arch::parameter_count() const noexcept {
  const auto c = static_cast<std::size_t>(num_classes);
  if (kind == Kind::Linear) return c * input_dim + c;
  return hidden * input_dim + hidden + c * hidden + c;
}

ModelParams init_model(const Arch& arch, std::uint64_t seed) {
  ModelParams model{arch, std::vector<double>(arch.parameter_count(), 0.0)};
  Rng rng = make_rng(seed, Stream::Init);
  auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t k = 0; k < count; ++k) {
      model.theta[offset + k] = (2.0 * uniform01(rng) - 1.0) * bound;
    }
  };
  const auto c = static_cast<std::size_t>(arch.num_classes);
  const std::size_t d = arch.input_dim;
  if (arch.kind == Arch::Kind::Linear) {
    fill(0, c * d, d);
  } else {
    const std::size_t h = arch.hidden;
    fill(0, h * d, d);
    fill(h * d + h, c * h, h);
  }
  return model;
}

namespace {

// Dense layer y = W x + b with W row-major (out x in).
void affine(const double* w, const double* b, std::span<const double> x, std::size_t out,
            double* y) {
  for (std::size_t o = 0; o < out; ++o) {
    const double* row = w + o * x.size();
    double acc = b[o];
    for (std::size_t k = 0; k < x.size(); ++k) acc += row[k] * x[k];
    y[o] = acc;
  }
}

// Turns logits into probabilities in place and returns log-sum-exp.
double softmax_inplace(std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (auto& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (auto& v : z) v /= s;
  return m + std::log(s);
}

void check_compatible(const ModelParams& model, const LabeledDataset& data) {
  if (model.theta.size() != model.arch.parameter_count()) {
    throw ContractError("parameter vector does not match the architecture");
  }
  if (data.num_features() != model.arch.input_dim ||
      data.num_classes() != model.arch.num_classes) {
    throw ContractError("dataset shape does not match the model");
  }
}

// Forward pass for one sample; fills hidden activations when the model has them.
void forward(const ModelParams& model, std::span<const double> x, std::vector<double>& hidden,
             std::vector<double>& logits) {
  const Arch& a = model.arch;
  const auto c = static_cast<std::size_t>(a.num_classes);
  const double* t = model.theta.data();
  logits.assign(c, 0.0);
  if (a.kind == Arch::Kind::Linear) {
    affine(t, t + c * a.input_dim, x, c, logits.data());
    return;
  }
  const std::size_t h = a.hidden;
  const std::size_t d = a.input_dim;
  hidden.assign(h, 0.0);
  affine(t, t + h * d, x, h, hidden.data());
  for (auto& v : hidden) v = std::max(v, 0.0);
  const double* w2 = t + h * d + h;
  affine(w2, w2 + c * h, hidden, c, logits.data());
}

}  // namespace

std::vector<double> predict_logits(const ModelParams& model, std::span<const double> x) {
  std::vector<double> hidden, logits;
  forward(model, x, hidden, logits);
  return logits;
}

LossGradient loss_and_gradient(const ModelParams& model, const LabeledDataset& data,
                               std::span<const std::size_t> batch) {
  check_compatible(model, data);
  if (batch.empty()) throw ParameterError("empty batch");
  const Arch& a = model.arch;
  const auto c = static_cast<std::size_t>(a.num_classes);
  const std::size_t d = a.input_dim;
  const std::size_t h = a.hidden;
  LossGradient out{0.0, std::vector<double>(model.theta.size(), 0.0)};
  double* g = out.gradient.data();
  const double* t = model.theta.data();
  std::vector<double> hidden, probs, dhidden(h);

  for (std::size_t idx : batch) {
    const auto x = data.row(idx);
    const auto y = static_cast<std::size_t>(data.label(idx));
    forward(model, x, hidden, probs);
    const double zy = probs[y];
    out.loss += softmax_inplace(probs) - zy;
    probs[y] -= 1.0;  // dL/dz
    if (a.kind == Arch::Kind::Linear) {
      for (std::size_t o = 0; o < c; ++o) {
        double* row = g + o * d;
        for (std::size_t k = 0; k < d; ++k) row[k] += probs[o] * x[k];
        g[c * d + o] += probs[o];
      }
      continue;
    }
    const std::size_t off2 = h * d + h;
    const double* w2 = t + off2;
    std::fill(dhidden.begin(), dhidden.end(), 0.0);
    for (std::size_t o = 0; o < c; ++o) {
      double* row = g + off2 + o * h;
      const double* wrow = w2 + o * h;
      for (std::size_t k = 0; k < h; ++k) {
        row[k] += probs[o] * hidden[k];
        dhidden[k] += probs[o] * wrow[k];
      }
      g[off2 + c * h + o] += probs[o];
    }
    for (std::size_t k = 0; k < h; ++k) {
      if (hidden[k] <= 0.0) continue;
      double* row = g + k * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += dhidden[k] * x[j];
      g[h * d + k] += dhidden[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (auto& v : out.gradient) v *= inv;
  return out;
}

LossGradient loss_and_gradient(const ModelParams& model, const LabeledDataset& data) {
  IndexList all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return loss_and_gradient(model, data, all);
}

Evaluation evaluate(const ModelParams& model, const LabeledDataset& data) {
  check_compatible(model, data);
  if (data.size() == 0) throw ParameterError("cannot evaluate on an empty dataset");
  std::vector<double> hidden, logits;
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    forward(model, data.row(i), hidden, logits);
    const auto y = static_cast<std::size_t>(data.label(i));
    const auto best = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (best == y) ++correct;
    const double zy = logits[y];
    loss += softmax_inplace(logits) - zy;
  }
  const double n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace fedauto
