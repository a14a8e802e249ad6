#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace fedauto {

using IndexList = std::vector<std::size_t>;

/// Row-major feature matrix with integer labels in [0, num_classes).
class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(std::vector<double> features, std::vector<int> labels,
                 std::size_t num_features, int num_classes);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t num_features() const noexcept { return num_features_; }
  int num_classes() const noexcept { return num_classes_; }

  std::span<const double> row(std::size_t i) const {
    return {features_.data() + i * num_features_, num_features_};
  }
  int label(std::size_t i) const { return labels_[i]; }

  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::vector<double>& features() const noexcept { return features_; }

  LabeledDataset subset(std::span<const std::size_t> indices) const;

  bool operator==(const LabeledDataset&) const = default;

 private:
  std::vector<double> features_;
  std::vector<int> labels_;
  std::size_t num_features_ = 0;
  int num_classes_ = 0;
};

/// Per-class sample proportions; entries are non-negative and sum to one.
struct ClassDistribution {
  std::vector<double> alpha;

  std::size_t size() const noexcept { return alpha.size(); }
  double operator[](std::size_t c) const { return alpha[c]; }
  bool operator==(const ClassDistribution&) const = default;
};

/// Disjoint assignment of source samples to the server (public set) and to
/// N clients (private sets), with dataset-size weights p_j = |D_j| / |D_g|.
struct PartitionPlan {
  IndexList server;
  std::vector<IndexList> clients;
  double p_server = 0.0;
  std::vector<double> p_clients;

  std::size_t num_clients() const noexcept { return clients.size(); }
  std::size_t total_size() const noexcept;
  std::size_t server_size() const noexcept { return server.size(); }
  std::vector<std::size_t> client_sizes() const;

  bool operator==(const PartitionPlan&) const = default;
};

/// Isotropic Gaussian clusters, one per class, with unit-variance noise.
/// Class c's mean is `separation` times a unit direction drawn from `seed`.
/// Samples are stored class-major (all of class 0 first).
LabeledDataset synth_gaussian_mixture(int num_classes, std::size_t dim,
                                      std::size_t n_per_class,
                                      double separation, std::uint64_t seed);

/// Splits each class: its first `train_per_class` samples (in index order)
/// go to the first dataset, the remainder to the second.
std::pair<LabeledDataset, LabeledDataset> split_per_class(
    const LabeledDataset& dataset, std::size_t train_per_class);

/// Reads an IDX image/label pair (e.g. MNIST). Pixels are scaled to [0, 1]
/// and the class count is inferred as max(label) + 1.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

/// Stratified public split plus a stratified, uniformly sized split of the
/// remaining samples across `num_clients` clients.
PartitionPlan partition_iid(const LabeledDataset& dataset, int num_clients,
                            double public_fraction, std::uint64_t seed);

/// Label-skewed split: classes are grouped into contiguous blocks of
/// `classes_per_client`, and consecutive runs of clients share one block
/// (with C=10, N=20, two classes each: clients 0-3 hold {0,1}, 4-7 {2,3}...).
/// The public set stays stratified over all classes.
PartitionPlan partition_shard_noniid(const LabeledDataset& dataset,
                                     int num_clients, int classes_per_client,
                                     double public_fraction,
                                     std::uint64_t seed);

/// Class block designated to `client` by partition_shard_noniid.
std::vector<int> shard_classes(int num_classes, int num_clients,
                               int classes_per_client, int client);

ClassDistribution class_distribution(const LabeledDataset& dataset,
                                     std::span<const std::size_t> indices);

/// p_s * alpha_s + sum_i p_i * alpha_i; `locals` holds the server first,
/// then the clients in plan order.
ClassDistribution global_distribution(
    const PartitionPlan& plan, std::span<const ClassDistribution> locals);

}  // namespace fedauto
