#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fedauto/aggregation.hpp"
#include "fedauto/network.hpp"
#include "fedauto/training.hpp"

namespace fedauto {

enum class FailureMode { None, Transient, Intermittent, Mixed };

enum class Strategy {
  Centralized,
  FedAvg,
  FedAvgIdeal,
  FedProx,
  Scaffold,
  TFAggregation,
  FedAWE,
  FedAuto,
  FedAutoNoM1,
  FedAutoNoM2,
  ResourceOpt1,
  ResourceOpt2,
};

std::string_view to_string(FailureMode m) noexcept;
std::string_view to_string(Strategy s) noexcept;
std::string_view to_string(Participation p) noexcept;
FailureMode failure_mode_from_string(std::string_view name);
Strategy strategy_from_string(std::string_view name);
Participation participation_from_string(std::string_view name);

struct DatasetSpec {
  /// "synthetic" (Gaussian mixture) or "idx" (MNIST-style files).
  std::string kind = "synthetic";
  int num_classes = 4;
  std::size_t dim = 16;
  std::size_t train_per_class = 250;
  std::size_t test_per_class = 250;
  double separation = 2.0;
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
};

struct PartitionSpec {
  /// "iid" or "shard".
  std::string scheme = "shard";
  int classes_per_client = 2;
  double public_fraction = 0.2;
};

struct ModelSpec {
  /// "linear" or "mlp".
  std::string arch = "mlp";
  std::size_t hidden = 32;
};

/// Per-client placement override; client ids are 1-based as in the link table.
struct LinkOverride {
  int client = 0;
  std::optional<double> distance_m;
  std::optional<int> walls;
};

struct NetworkSpec {
  double model_size_bits = 0.86e6;
  double tx_delay_s = 0.8;
  double intermittent_alpha = 10.0;
  /// One rate per client; empty selects the default rate of each client's group.
  std::vector<double> intermittent_rates;
  std::array<StandardProfile, kNumStandards> link_table = default_link_table();
  PlacementParams placement;
  std::vector<LinkOverride> overrides;
  ResourceOptOptions resource_opt;
};

struct StrategyParams {
  double prox_mu = 0.01;
  double fedawe_gamma = 0.001;
  double scaffold_gamma = 1.0;
  double tf_eps_threshold = 0.9;
  bool relax_zero_connected = false;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  int seeds = 1;
  int rounds = 200;
  int num_clients = 8;
  int selected_per_round = 8;
  Participation participation = Participation::Full;
  FailureMode failure_mode = FailureMode::Mixed;
  std::vector<Strategy> strategies{Strategy::FedAvg, Strategy::FedAuto};
  DatasetSpec dataset;
  PartitionSpec partition;
  ModelSpec model;
  TrainConfig train;
  int pretrain_epochs = 5;
  /// Learning rate is multiplied by lr_drop_factor from this round on; 0 disables.
  int lr_drop_round = 0;
  double lr_drop_factor = 0.1;
  StrategyParams strategy;
  NetworkSpec network;
  int diagnostic_stride = 10;
  std::string output_dir = "runs";
};

/// Throws ConfigError naming the first invalid key.
void validate(const ExperimentConfig& cfg);

/// The full schema with default values; every accepted key appears here.
nlohmann::json default_config_json();

nlohmann::json to_json(const ExperimentConfig& cfg);

/// Overlays `doc` on the defaults. Keys absent from the schema are rejected.
ExperimentConfig parse_config(const nlohmann::json& doc);

/// Applies "a.b.c=value" to `doc`. The value is parsed as JSON and falls back
/// to a plain string. The path must exist in the schema.
void apply_override(nlohmann::json& doc, std::string_view assignment);

/// Reads a JSON config file, applies overrides in order, parses and validates.
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::span<const std::string> overrides = {});

}  // namespace fedauto
