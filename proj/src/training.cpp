#include "fedauto/training.hpp"

#include <algorithm>
#include <numeric>

#include "fedauto/errors.hpp"

namespace fedauto {

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0.0)) throw ParameterError("learning rate must be non-negative");
  if (cfg.local_steps < 1) throw ParameterError("local steps must be at least 1");
  if (cfg.batch_size < 1) throw ParameterError("batch size must be at least 1");
  if (!(cfg.mu >= 0.0)) throw ParameterError("proximal mu must be non-negative");
}

BatchSampler::BatchSampler(std::size_t num_samples, std::size_t batch_size, Rng& rng)
    : batch_size_(std::min(batch_size, num_samples)), rng_(rng), order_(num_samples) {
  if (num_samples == 0) throw ParameterError("cannot sample batches from an empty dataset");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  cursor_ = order_.size();
}

void BatchSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  // Fisher-Yates over uniform01 keeps epochs identical across standard libraries.
  for (std::size_t i = order_.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng_) * static_cast<double>(i));
    std::swap(order_[i - 1], order_[std::min(j, i - 1)]);
  }
  cursor_ = 0;
}

const IndexList& BatchSampler::next() {
  if (batch_size_ == order_.size()) {
    if (batch_.empty()) {
      batch_.resize(order_.size());
      std::iota(batch_.begin(), batch_.end(), std::size_t{0});
    }
    return batch_;
  }
  if (order_.size() - cursor_ < batch_size_) reshuffle();
  batch_.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_size_));
  cursor_ += batch_size_;
  std::sort(batch_.begin(), batch_.end());
  return batch_;
}

namespace {

// Runs E steps; `correct` adds the variant's extra term to the batch gradient.
template <typename Correction>
ModelParams run_sgd(const ModelParams& model, const LabeledDataset& data, const TrainConfig& cfg,
                    Rng& rng, Correction&& correct) {
  validate(cfg);
  if (data.size() == 0) throw ParameterError("local dataset is empty");
  ModelParams w = model;
  BatchSampler sampler(data.size(), cfg.batch_size, rng);
  for (int step = 0; step < cfg.local_steps; ++step) {
    auto lg = loss_and_gradient(w, data, sampler.next());
    correct(w, lg.gradient);
    for (std::size_t k = 0; k < w.theta.size(); ++k) {
      w.theta[k] -= cfg.learning_rate * lg.gradient[k];
    }
  }
  return w;
}

}  // namespace

ModelParams local_update(const ModelParams& model, const LabeledDataset& data,
                         const TrainConfig& cfg, Rng& rng) {
  return run_sgd(model, data, cfg, rng, [](const ModelParams&, std::vector<double>&) {});
}

ModelParams server_update(const ModelParams& model, const LabeledDataset& public_data,
                          const TrainConfig& cfg, Rng& rng) {
  return local_update(model, public_data, cfg, rng);
}

CompensatoryResult compensatory_update(const ModelParams& model,
                                       const LabeledDataset& public_data,
                                       const std::vector<int>& missing,
                                       const TrainConfig& cfg, Rng& rng) {
  if (missing.empty()) throw ParameterError("compensatory training needs a missing class");
  const int classes = public_data.num_classes();
  std::vector<bool> wanted(static_cast<std::size_t>(classes), false);
  for (int c : missing) {
    if (c < 0 || c >= classes) throw ParameterError("missing class out of range");
    wanted[static_cast<std::size_t>(c)] = true;
  }
  IndexList picked;
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < public_data.size(); ++i) {
    const auto c = static_cast<std::size_t>(public_data.label(i));
    if (wanted[c]) {
      picked.push_back(i);
      ++counts[c];
    }
  }
  std::vector<int> uncovered;
  for (int c : missing) {
    if (counts[static_cast<std::size_t>(c)] == 0) uncovered.push_back(c);
  }
  std::sort(uncovered.begin(), uncovered.end());
  uncovered.erase(std::unique(uncovered.begin(), uncovered.end()), uncovered.end());
  if (picked.empty()) throw CoverageGap(uncovered);

  const LabeledDataset miss_set = public_data.subset(picked);
  CompensatoryResult out;
  IndexList all(miss_set.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  out.alpha_miss = class_distribution(miss_set, all);
  out.model = local_update(model, miss_set, cfg, rng);
  out.uncovered = std::move(uncovered);
  return out;
}

ModelParams prox_local_update(const ModelParams& model, const LabeledDataset& data,
                              const TrainConfig& cfg, const ModelParams& anchor, Rng& rng) {
  if (anchor.theta.size() != model.theta.size()) {
    throw ContractError("proximal anchor does not match the model");
  }
  const double mu = cfg.mu;
  return run_sgd(model, data, cfg, rng, [&](const ModelParams& w, std::vector<double>& g) {
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += mu * (w.theta[k] - anchor.theta[k]);
  });
}

ScaffoldResult scaffold_local_update(const ModelParams& model, const LabeledDataset& data,
                                     const TrainConfig& cfg, const std::vector<double>& server_cv,
                                     const std::vector<double>& client_cv, int k_steps, Rng& rng) {
  const std::size_t n = model.theta.size();
  if (server_cv.size() != n || client_cv.size() != n) {
    throw ContractError("control variate length does not match the model");
  }
  if (k_steps < 1) throw ParameterError("SCAFFOLD K must be at least 1");
  if (!(cfg.learning_rate > 0.0)) throw ParameterError("SCAFFOLD needs a positive learning rate");
  ScaffoldResult out;
  out.model = run_sgd(model, data, cfg, rng, [&](const ModelParams&, std::vector<double>& g) {
    for (std::size_t k = 0; k < n; ++k) g[k] += server_cv[k] - client_cv[k];
  });
  out.client_cv.resize(n);
  const double scale = 1.0 / (static_cast<double>(k_steps) * cfg.learning_rate);
  for (std::size_t k = 0; k < n; ++k) {
    out.client_cv[k] =
        client_cv[k] - server_cv[k] + (model.theta[k] - out.model.theta[k]) * scale;
  }
  return out;
}

}  // namespace fedauto
