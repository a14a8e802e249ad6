#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "fedauto/data.hpp"
#include "fedauto/errors.hpp"

using namespace fedauto;

namespace {

std::vector<ClassDistribution> locals_of(const LabeledDataset& d, const PartitionPlan& plan) {
  std::vector<ClassDistribution> out{class_distribution(d, plan.server)};
  for (const auto& c : plan.clients) out.push_back(class_distribution(d, c));
  return out;
}

IndexList union_of(const PartitionPlan& plan) {
  IndexList all = plan.server;
  for (const auto& c : plan.clients) all.insert(all.end(), c.begin(), c.end());
  return all;
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

struct IdxPair {
  std::filesystem::path images;
  std::filesystem::path labels;
};

IdxPair write_idx(const std::string& stem, std::uint32_t n, std::uint32_t rows, std::uint32_t cols) {
  const auto dir = std::filesystem::temp_directory_path() / "fedauto_idx_test";
  std::filesystem::create_directories(dir);
  IdxPair p{dir / (stem + "-images"), dir / (stem + "-labels")};
  std::ofstream im(p.images, std::ios::binary);
  write_be32(im, 0x00000803);
  write_be32(im, n);
  write_be32(im, rows);
  write_be32(im, cols);
  for (std::uint32_t i = 0; i < n * rows * cols; ++i) {
    const char px = static_cast<char>(static_cast<unsigned char>(i % 256));
    im.write(&px, 1);
  }
  std::ofstream lb(p.labels, std::ios::binary);
  write_be32(lb, 0x00000801);
  write_be32(lb, n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const char y = static_cast<char>(i % 3);
    lb.write(&y, 1);
  }
  return p;
}

}  // namespace

TEST_CASE("synthetic mixture cardinalities and determinism") {
  const auto tiny = synth_gaussian_mixture(2, 2, 1, 1.0, 0);
  CHECK(tiny.size() == 2);
  CHECK(std::set<int>(tiny.labels().begin(), tiny.labels().end()) == std::set<int>{0, 1});

  const auto d = synth_gaussian_mixture(4, 8, 250, 2.0, 7);
  CHECK(d.size() == 1000);
  for (int c = 0; c < 4; ++c) CHECK(std::count(d.labels().begin(), d.labels().end(), c) == 250);
  CHECK(d == synth_gaussian_mixture(4, 8, 250, 2.0, 7));
  CHECK_FALSE(d == synth_gaussian_mixture(4, 8, 250, 2.0, 8));

  CHECK_THROWS_AS(synth_gaussian_mixture(1, 2, 1, 1.0, 0), ParameterError);
  CHECK_THROWS_AS(synth_gaussian_mixture(2, 0, 1, 1.0, 0), ParameterError);
  CHECK_THROWS_AS(synth_gaussian_mixture(2, 2, 0, 1.0, 0), ParameterError);
  CHECK_THROWS_AS(synth_gaussian_mixture(2, 2, 1, 0.0, 0), ParameterError);
}

TEST_CASE("labeled dataset rejects inconsistent shapes") {
  CHECK_THROWS_AS(LabeledDataset({1.0, 2.0}, {0}, 1, 2), ParameterError);
  CHECK_THROWS_AS(LabeledDataset({1.0}, {2}, 1, 2), ParameterError);
  CHECK_THROWS_AS(LabeledDataset({1.0}, {0}, 1, 1), ParameterError);
}

TEST_CASE("split_per_class keeps class-major order") {
  const auto d = synth_gaussian_mixture(3, 2, 10, 1.0, 3);
  const auto [a, b] = split_per_class(d, 7);
  CHECK(a.size() == 21);
  CHECK(b.size() == 9);
  for (int c = 0; c < 3; ++c) {
    CHECK(std::count(a.labels().begin(), a.labels().end(), c) == 7);
    CHECK(std::count(b.labels().begin(), b.labels().end(), c) == 3);
  }
}

TEST_CASE("load_idx reads well-formed files and rejects bad ones") {
  const auto p = write_idx("ok", 6, 2, 2);
  const auto d = load_idx(p.images, p.labels);
  CHECK(d.size() == 6);
  CHECK(d.num_features() == 4);
  CHECK(d.num_classes() == 3);
  for (double v : d.features()) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(d.row(0)[1] == doctest::Approx(1.0 / 255.0));

  CHECK_THROWS_AS(load_idx(p.labels, p.images), FormatError);
  const auto empty = std::filesystem::temp_directory_path() / "fedauto_idx_test" / "empty";
  std::ofstream(empty, std::ios::binary).close();
  CHECK_THROWS_AS(load_idx(empty, p.labels), FormatError);
  CHECK_THROWS_AS(load_idx(p.images, empty), FormatError);

  const auto q = write_idx("short", 5, 2, 2);
  CHECK_THROWS_AS(load_idx(q.images, p.labels), FormatError);
}

TEST_CASE("iid partition arithmetic and weights") {
  const auto d = synth_gaussian_mixture(10, 4, 100, 2.0, 1);
  const auto plan = partition_iid(d, 20, 0.2, 5);
  CHECK(plan.server.size() == 200);
  for (const auto& c : plan.clients) CHECK(c.size() == 40);
  double total = plan.p_server;
  for (double p : plan.p_clients) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(plan.p_server == 200.0 / 1000.0);
  CHECK(plan == partition_iid(d, 20, 0.2, 5));

  const auto solo = partition_iid(d, 1, 0.01, 5);
  CHECK(solo.clients[0].size() == 1000 - solo.server.size());
  CHECK(solo.server.size() == 10);

  CHECK_THROWS_AS(partition_iid(d, 0, 0.2, 5), ParameterError);
  CHECK_THROWS_AS(partition_iid(d, 2, 1.0, 5), ParameterError);
  CHECK_THROWS_AS(partition_iid(synth_gaussian_mixture(2, 2, 3, 1.0, 0), 10, 0.4, 5), ParameterError);
}

TEST_CASE("shard partition follows the block pattern") {
  const auto d = synth_gaussian_mixture(10, 4, 100, 2.0, 2);
  const auto plan = partition_shard_noniid(d, 20, 2, 0.2, 9);
  for (int k = 0; k < 20; ++k) {
    const auto block = shard_classes(10, 20, 2, k);
    std::set<int> support;
    for (std::size_t i : plan.clients[static_cast<std::size_t>(k)]) support.insert(d.label(i));
    CHECK(support == std::set<int>(block.begin(), block.end()));
    if (k < 4) CHECK(support == std::set<int>{0, 1});
  }
  const auto server_alpha = class_distribution(d, plan.server);
  for (double a : server_alpha.alpha) CHECK(a == doctest::Approx(0.1));

  const auto full = partition_shard_noniid(d, 4, 10, 0.2, 9);
  for (const auto& c : full.clients) {
    const auto a = class_distribution(d, c);
    for (double v : a.alpha) CHECK(v == doctest::Approx(0.1));
  }

  CHECK_THROWS_AS(partition_shard_noniid(d, 20, 3, 0.2, 9), ParameterError);
  CHECK_THROWS_AS(partition_shard_noniid(d, 7, 2, 0.2, 9), ParameterError);
}

TEST_CASE("class distribution examples") {
  const LabeledDataset d({0, 0, 0, 0, 0}, {0, 0, 1, 1, 0}, 1, 2);
  const IndexList even{0, 1, 2, 3};
  CHECK(class_distribution(d, even).alpha == std::vector<double>{0.5, 0.5});
  const IndexList skew{0, 1, 4, 2};
  CHECK(class_distribution(d, skew).alpha == std::vector<double>{0.75, 0.25});
  CHECK_THROWS_AS(class_distribution(d, IndexList{}), ParameterError);
}

TEST_CASE("global distribution examples") {
  PartitionPlan plan;
  plan.server = {0};
  plan.clients = {{1}};
  plan.p_server = 0.5;
  plan.p_clients = {0.5};
  const std::vector<ClassDistribution> opposite{{{1.0, 0.0}}, {{0.0, 1.0}}};
  CHECK(global_distribution(plan, opposite).alpha == std::vector<double>{0.5, 0.5});
  const std::vector<ClassDistribution> same{{{0.3, 0.7}}, {{0.3, 0.7}}};
  const auto g = global_distribution(plan, same);
  CHECK(g.alpha[0] == doctest::Approx(0.3));
  CHECK(g.alpha[1] == doctest::Approx(0.7));
  const std::vector<ClassDistribution> ragged{{{1.0, 0.0}}, {{0.0, 0.5, 0.5}}};
  CHECK_THROWS_AS(global_distribution(plan, ragged), ParameterError);
  CHECK_THROWS_AS(global_distribution(plan, std::vector<ClassDistribution>{{{1.0, 0.0}}}),
                  ParameterError);
}

TEST_CASE("property: partitions conserve mass and match the union") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int classes = 2 + static_cast<int>(seed % 4) * 2;
    const auto d = synth_gaussian_mixture(classes, 3, 40 + seed, 1.0, seed);
    const bool shard = seed % 2 == 0;
    const int n = shard ? classes : 3 + static_cast<int>(seed % 5);
    const auto plan = shard ? partition_shard_noniid(d, n, 2, 0.25, seed)
                            : partition_iid(d, n, 0.25, seed);

    // Disjoint cover of a subset.
    auto all = union_of(plan);
    std::sort(all.begin(), all.end());
    CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
    CHECK(all.back() < d.size());

    double total = plan.p_server;
    for (double p : plan.p_clients) total += p;
    CHECK(std::abs(total - 1.0) <= 1e-12);
    CHECK(plan.p_server == static_cast<double>(plan.server.size()) / static_cast<double>(all.size()));

    const auto g = global_distribution(plan, locals_of(d, plan));
    const auto direct = class_distribution(d, all);
    double mass = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
      CHECK(std::abs(g[c] - direct[c]) <= 1e-12);
      mass += g[c] * static_cast<double>(all.size());
    }
    CHECK(std::llround(mass) == static_cast<long long>(all.size()));
    CHECK(std::abs(mass - static_cast<double>(all.size())) <= 1e-9);

    if (shard) {
      for (int k = 0; k < n; ++k) {
        const auto block = shard_classes(classes, n, 2, k);
        const auto a = class_distribution(d, plan.clients[static_cast<std::size_t>(k)]);
        for (int c = 0; c < classes; ++c) {
          const bool in = std::find(block.begin(), block.end(), c) != block.end();
          CHECK((a[static_cast<std::size_t>(c)] > 0.0) == in);
        }
      }
    }
  }
}
