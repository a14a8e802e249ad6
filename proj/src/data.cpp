#include "fedauto/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

#include "fedauto/errors.hpp"
#include "fedauto/rng.hpp"

namespace fedauto {

LabeledDataset::LabeledDataset(std::vector<double> features,
                               std::vector<int> labels,
                               std::size_t num_features, int num_classes)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      num_features_(num_features),
      num_classes_(num_classes) {
  if (num_classes_ < 2) throw ParameterError("dataset needs at least 2 classes");
  if (num_features_ == 0) throw ParameterError("dataset needs at least 1 feature");
  if (features_.size() != labels_.size() * num_features_) {
    throw ParameterError("feature matrix has " + std::to_string(features_.size()) +
                         " entries, expected " +
                         std::to_string(labels_.size() * num_features_));
  }
  for (int y : labels_) {
    if (y < 0 || y >= num_classes_) {
      throw ParameterError("label " + std::to_string(y) + " outside [0, " +
                           std::to_string(num_classes_) + ")");
    }
  }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  std::vector<double> features;
  std::vector<int> labels;
  features.reserve(indices.size() * num_features_);
  labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw ParameterError("subset index out of range");
    auto r = row(i);
    features.insert(features.end(), r.begin(), r.end());
    labels.push_back(labels_[i]);
  }
  return LabeledDataset(std::move(features), std::move(labels), num_features_,
                        num_classes_);
}

std::size_t PartitionPlan::total_size() const noexcept {
  std::size_t total = server.size();
  for (const auto& c : clients) total += c.size();
  return total;
}

std::vector<std::size_t> PartitionPlan::client_sizes() const {
  std::vector<std::size_t> sizes;
  sizes.reserve(clients.size());
  for (const auto& c : clients) sizes.push_back(c.size());
  return sizes;
}

LabeledDataset synth_gaussian_mixture(int num_classes, std::size_t dim,
                                      std::size_t n_per_class,
                                      double separation, std::uint64_t seed) {
  if (num_classes < 2 || dim < 1 || n_per_class < 1 || !(separation > 0.0)) {
    throw ParameterError(
        "synth_gaussian_mixture requires C >= 2, d >= 1, n_per_class >= 1, "
        "separation > 0");
  }
  std::vector<double> features;
  std::vector<int> labels;
  features.reserve(static_cast<std::size_t>(num_classes) * n_per_class * dim);
  labels.reserve(static_cast<std::size_t>(num_classes) * n_per_class);

  std::vector<double> mean(dim);
  for (int c = 0; c < num_classes; ++c) {
    auto mean_rng = make_rng(seed, Stream::Data, 0, static_cast<std::uint64_t>(c));
    std::normal_distribution<double> normal(0.0, 1.0);
    double norm2 = 0.0;
    for (auto& m : mean) {
      m = normal(mean_rng);
      norm2 += m * m;
    }
    const double scale = separation / std::sqrt(norm2);
    for (auto& m : mean) m *= scale;

    auto sample_rng = make_rng(seed, Stream::Data, 1, static_cast<std::uint64_t>(c));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t s = 0; s < n_per_class; ++s) {
      for (std::size_t k = 0; k < dim; ++k) features.push_back(mean[k] + noise(sample_rng));
      labels.push_back(c);
    }
  }
  return LabeledDataset(std::move(features), std::move(labels), dim, num_classes);
}

std::pair<LabeledDataset, LabeledDataset> split_per_class(
    const LabeledDataset& dataset, std::size_t train_per_class) {
  std::vector<std::size_t> seen(static_cast<std::size_t>(dataset.num_classes()), 0);
  IndexList first, second;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto& count = seen[static_cast<std::size_t>(dataset.label(i))];
    (count < train_per_class ? first : second).push_back(i);
    ++count;
  }
  return {dataset.subset(first), dataset.subset(second)};
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset) {
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[offset + 3]);
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);

  if (images.size() < 16) throw FormatError(images_path.string() + ": truncated IDX header");
  if (read_be32(images, 0) != kIdxImagesMagic) {
    throw FormatError(images_path.string() + ": not an IDX image file (magic mismatch)");
  }
  if (labels.size() < 8) throw FormatError(labels_path.string() + ": truncated IDX header");
  if (read_be32(labels, 0) != kIdxLabelsMagic) {
    throw FormatError(labels_path.string() + ": not an IDX label file (magic mismatch)");
  }

  const std::size_t n = read_be32(images, 4);
  const std::size_t rows = read_be32(images, 8);
  const std::size_t cols = read_be32(images, 12);
  const std::size_t n_labels = read_be32(labels, 4);
  const std::size_t pixels = rows * cols;
  if (n != n_labels) {
    throw FormatError("image count " + std::to_string(n) + " != label count " +
                      std::to_string(n_labels));
  }
  if (images.size() < 16 + n * pixels) throw FormatError(images_path.string() + ": truncated image data");
  if (labels.size() < 8 + n) throw FormatError(labels_path.string() + ": truncated label data");
  if (n == 0 || pixels == 0) throw FormatError("IDX files contain no samples");

  std::vector<double> features(n * pixels);
  for (std::size_t i = 0; i < n * pixels; ++i) features[i] = images[16 + i] / 255.0;
  std::vector<int> y(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = labels[8 + i];
    max_label = std::max(max_label, y[i]);
  }
  if (max_label < 1) throw FormatError("IDX labels hold a single class");
  return LabeledDataset(std::move(features), std::move(y), pixels, max_label + 1);
}

namespace {

std::vector<IndexList> indices_by_class(const LabeledDataset& dataset) {
  std::vector<IndexList> by_class(static_cast<std::size_t>(dataset.num_classes()));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[static_cast<std::size_t>(dataset.label(i))].push_back(i);
  }
  return by_class;
}

// Shuffles every class and moves floor(n_c * fraction) samples of each into
// `server`; the per-class leftovers remain in `by_class`.
void take_public_split(std::vector<IndexList>& by_class, double public_fraction,
                       Rng& rng, IndexList& server) {
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto take = static_cast<std::size_t>(
        std::floor(static_cast<double>(idx.size()) * public_fraction + 1e-9));
    server.insert(server.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    idx.erase(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
  }
}

// Deals the leftovers of class `c` evenly over `members`; the n mod m extra
// samples go round-robin starting at member (c mod m).
void deal_class(const IndexList& pool, int c, std::span<const int> members,
                std::vector<IndexList>& clients) {
  const std::size_t m = members.size();
  const std::size_t base = pool.size() / m;
  const std::size_t extra = pool.size() % m;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < m; ++k) {
    auto& dst = clients[static_cast<std::size_t>(members[k])];
    dst.insert(dst.end(), pool.begin() + static_cast<std::ptrdiff_t>(pos),
               pool.begin() + static_cast<std::ptrdiff_t>(pos + base));
    pos += base;
  }
  for (std::size_t t = 0; t < extra; ++t) {
    const std::size_t k = (static_cast<std::size_t>(c) + t) % m;
    clients[static_cast<std::size_t>(members[k])].push_back(pool[pos++]);
  }
}

void finalize_weights(PartitionPlan& plan) {
  std::sort(plan.server.begin(), plan.server.end());
  for (auto& c : plan.clients) std::sort(c.begin(), c.end());
  const double total = static_cast<double>(plan.total_size());
  plan.p_server = static_cast<double>(plan.server.size()) / total;
  plan.p_clients.clear();
  for (const auto& c : plan.clients) plan.p_clients.push_back(static_cast<double>(c.size()) / total);
}

void check_partition_args(int num_clients, double public_fraction) {
  if (num_clients < 1) throw ParameterError("need at least one client");
  if (!(public_fraction > 0.0 && public_fraction < 1.0)) {
    throw ParameterError("public_fraction must lie in (0, 1)");
  }
}

}  // namespace

std::vector<int> shard_classes(int num_classes, int num_clients,
                               int classes_per_client, int client) {
  if (classes_per_client < 1 || num_classes % classes_per_client != 0) {
    throw ParameterError("classes_per_client must divide the class count");
  }
  const int groups = num_classes / classes_per_client;
  if (num_clients % groups != 0) {
    throw ParameterError("client count " + std::to_string(num_clients) +
                         " is not a multiple of the " + std::to_string(groups) +
                         " class blocks");
  }
  const int members = num_clients / groups;
  const int group = client / members;
  std::vector<int> classes(static_cast<std::size_t>(classes_per_client));
  std::iota(classes.begin(), classes.end(), group * classes_per_client);
  return classes;
}

PartitionPlan partition_shard_noniid(const LabeledDataset& dataset,
                                     int num_clients, int classes_per_client,
                                     double public_fraction,
                                     std::uint64_t seed) {
  check_partition_args(num_clients, public_fraction);
  const int num_classes = dataset.num_classes();
  // Validates divisibility.
  shard_classes(num_classes, num_clients, classes_per_client, 0);
  const int groups = num_classes / classes_per_client;
  const int members = num_clients / groups;

  auto rng = make_rng(seed, Stream::Partition);
  auto by_class = indices_by_class(dataset);
  PartitionPlan plan;
  take_public_split(by_class, public_fraction, rng, plan.server);
  if (plan.server.empty()) throw ParameterError("public split is empty; raise public_fraction");

  plan.clients.resize(static_cast<std::size_t>(num_clients));
  for (int c = 0; c < num_classes; ++c) {
    const auto& pool = by_class[static_cast<std::size_t>(c)];
    if (pool.size() < static_cast<std::size_t>(members)) {
      throw ParameterError("class " + std::to_string(c) + " has " +
                           std::to_string(pool.size()) + " private samples for " +
                           std::to_string(members) + " clients");
    }
    const int group = c / classes_per_client;
    std::vector<int> member_ids(static_cast<std::size_t>(members));
    std::iota(member_ids.begin(), member_ids.end(), group * members);
    deal_class(pool, c, member_ids, plan.clients);
  }
  finalize_weights(plan);
  return plan;
}

PartitionPlan partition_iid(const LabeledDataset& dataset, int num_clients,
                            double public_fraction, std::uint64_t seed) {
  check_partition_args(num_clients, public_fraction);
  auto rng = make_rng(seed, Stream::Partition);
  auto by_class = indices_by_class(dataset);
  PartitionPlan plan;
  take_public_split(by_class, public_fraction, rng, plan.server);
  if (plan.server.empty()) throw ParameterError("public split is empty; raise public_fraction");

  plan.clients.resize(static_cast<std::size_t>(num_clients));
  std::vector<int> members(static_cast<std::size_t>(num_clients));
  std::iota(members.begin(), members.end(), 0);
  for (int c = 0; c < dataset.num_classes(); ++c) {
    deal_class(by_class[static_cast<std::size_t>(c)], c, members, plan.clients);
  }
  for (std::size_t k = 0; k < plan.clients.size(); ++k) {
    if (plan.clients[k].empty()) {
      throw ParameterError("too few samples: client " + std::to_string(k) + " received none");
    }
  }
  finalize_weights(plan);
  return plan;
}

ClassDistribution class_distribution(const LabeledDataset& dataset,
                                     std::span<const std::size_t> indices) {
  if (indices.empty()) throw ParameterError("class distribution of an empty index set");
  std::vector<std::size_t> counts(static_cast<std::size_t>(dataset.num_classes()), 0);
  for (std::size_t i : indices) ++counts[static_cast<std::size_t>(dataset.label(i))];
  ClassDistribution out;
  out.alpha.reserve(counts.size());
  const double total = static_cast<double>(indices.size());
  for (std::size_t n : counts) out.alpha.push_back(static_cast<double>(n) / total);
  return out;
}

ClassDistribution global_distribution(const PartitionPlan& plan,
                                      std::span<const ClassDistribution> locals) {
  if (locals.size() != plan.clients.size() + 1 || plan.p_clients.size() != plan.clients.size()) {
    throw ParameterError("need one class distribution for the server and each client");
  }
  const std::size_t num_classes = locals.front().size();
  for (const auto& d : locals) {
    if (d.size() != num_classes) throw ParameterError("class distribution length mismatch");
  }
  ClassDistribution g;
  g.alpha.assign(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    double v = plan.p_server * locals[0][c];
    for (std::size_t i = 0; i < plan.clients.size(); ++i) v += plan.p_clients[i] * locals[i + 1][c];
    g.alpha[c] = v;
  }
  return g;
}

}  // namespace fedauto
