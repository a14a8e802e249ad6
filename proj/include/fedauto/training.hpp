#pragma once

#include <cstddef>
#include <vector>

#include "fedauto/data.hpp"
#include "fedauto/model.hpp"
#include "fedauto/rng.hpp"

namespace fedauto {

enum class Variant { Plain, Prox, Scaffold };

struct TrainConfig {
  double learning_rate = 0.05;
  int local_steps = 5;
  std::size_t batch_size = 32;
  Variant variant = Variant::Plain;
  /// Proximal coefficient; read only by the Prox variant.
  double mu = 0.0;
};

void validate(const TrainConfig& cfg);

/// Mini-batches drawn without replacement from a shuffled epoch. When fewer
/// than `batch_size` indices remain, the tail is dropped and a new epoch is
/// shuffled. A batch as large as the dataset is the whole dataset. Indices in
/// a batch are returned sorted so full-batch gradients are order independent.
class BatchSampler {
 public:
  BatchSampler(std::size_t num_samples, std::size_t batch_size, Rng& rng);

  const IndexList& next();

 private:
  void reshuffle();

  std::size_t batch_size_;
  Rng& rng_;
  IndexList order_;
  std::size_t cursor_ = 0;
  IndexList batch_;
};

/// E steps of w <- w - lr * grad F(w; batch) starting from `model`.
ModelParams local_update(const ModelParams& model, const LabeledDataset& data,
                         const TrainConfig& cfg, Rng& rng);

/// The server's step on its public set; same rule as local_update.
ModelParams server_update(const ModelParams& model, const LabeledDataset& public_data,
                          const TrainConfig& cfg, Rng& rng);

struct CompensatoryResult {
  ModelParams model;
  /// Class distribution of the compensation set (support = covered missing classes).
  ClassDistribution alpha_miss;
  /// Missing classes without any public sample; compensation used the rest.
  std::vector<int> uncovered;
};

/// Trains on the public samples whose label is in `missing`. Throws
/// CoverageGap when no missing class has a public sample.
CompensatoryResult compensatory_update(const ModelParams& model,
                                       const LabeledDataset& public_data,
                                       const std::vector<int>& missing,
                                       const TrainConfig& cfg, Rng& rng);

/// Local SGD on F(w) + (mu / 2) ||w - anchor||^2.
ModelParams prox_local_update(const ModelParams& model, const LabeledDataset& data,
                              const TrainConfig& cfg, const ModelParams& anchor, Rng& rng);

struct ScaffoldResult {
  ModelParams model;
  std::vector<double> client_cv;
};

/// Steps along grad F - c_i + c, then c_i+ = c_i - c + (w_start - w_E) / (K lr).
ScaffoldResult scaffold_local_update(const ModelParams& model, const LabeledDataset& data,
                                     const TrainConfig& cfg, const std::vector<double>& server_cv,
                                     const std::vector<double>& client_cv, int k_steps, Rng& rng);

}  // namespace fedauto
