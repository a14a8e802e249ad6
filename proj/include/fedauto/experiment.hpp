#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedauto/aggregation.hpp"
#include "fedauto/config.hpp"
#include "fedauto/data.hpp"
#include "fedauto/diagnostics.hpp"
#include "fedauto/model.hpp"
#include "fedauto/network.hpp"

namespace fedauto {

/// Everything a run needs that does not depend on the strategy.
struct Environment {
  LabeledDataset train;
  LabeledDataset test;
  PartitionPlan plan;
  LabeledDataset server_data;
  std::vector<LabeledDataset> client_data;
  /// Union of the server's and clients' samples; F_g is its mean loss.
  LabeledDataset pooled;
  ClassDistribution alpha_g;
  ClassDistribution alpha_s;
  std::vector<ClassDistribution> client_alphas;
  std::vector<std::size_t> client_sizes;
  std::vector<LinkConfig> links;
  /// Per-client transient failure probability of the configured links.
  std::vector<double> epsilon0;
  std::vector<double> intermittent_rates;
  /// Global model after pre-training on the public set.
  ModelParams initial;
};

Arch make_arch(const ExperimentConfig& cfg, std::size_t input_dim, int num_classes);

/// Client links drawn from the placement geometry, then per-client overrides.
std::vector<LinkConfig> build_links(const ExperimentConfig& cfg, std::uint64_t seed);

Environment build_environment(const ExperimentConfig& cfg, std::uint64_t seed);

/// K draws with replacement from `probs` (need not be normalized).
std::vector<int> sample_with_replacement(std::span<const double> probs, int k, Rng& rng);

/// Full: every client in order. Partial: K draws with replacement, client i
/// with probability p_i / (1 - p_s).
std::vector<int> select_clients(int num_clients, int k, std::span<const double> p_clients,
                                double p_s, Participation mode, Rng& rng);

/// up[r - 1][i]: whether client i's upload can succeed in round r. Each
/// (round, client) pair draws from its own substreams, so two runs with the
/// same seed share masks whatever they do in between.
std::vector<std::vector<bool>> realize_availability(FailureMode mode,
                                                    std::span<const double> epsilon,
                                                    std::span<const double> rates,
                                                    double duration_alpha, int rounds,
                                                    std::uint64_t seed);

/// One strategy's federated run over a shared environment.
class FederatedRun {
 public:
  FederatedRun(const Environment& env, const ExperimentConfig& cfg, Strategy strategy,
               std::uint64_t seed);

  /// Rounds must be run in order starting at 1.
  RoundRecord run_round(int round);

  const ModelParams& global() const noexcept { return global_; }
  Strategy strategy() const noexcept { return strategy_; }
  /// Per-client epsilon the run's masks were drawn with.
  const std::vector<double>& epsilon() const noexcept { return epsilon_; }

 private:
  ConnectivityMask draw_mask(int round);
  TrainConfig round_config(int round) const;

  const Environment& env_;
  const ExperimentConfig& cfg_;
  Strategy strategy_;
  std::uint64_t seed_;
  int next_round_ = 1;
  ModelParams global_;
  std::vector<double> epsilon_;
  std::vector<std::vector<bool>> availability_;
  std::vector<double> tf_selection_;
  std::vector<double> server_cv_;
  std::vector<std::vector<double>> client_cvs_;
  std::vector<int> last_success_;
};

struct StrategyRun {
  Strategy strategy = Strategy::FedAvg;
  std::vector<RoundRecord> records;
  ModelParams final_model;
};

struct RunLog {
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<StrategyRun> runs;
};

/// Runs every configured strategy over one environment with paired masks.
RunLog run_experiment(const ExperimentConfig& cfg, std::uint64_t seed);

/// Seeds cfg.seed, cfg.seed + 1, ... for `num_seeds` runs.
std::vector<RunLog> run_sweep(const ExperimentConfig& cfg, int num_seeds);

std::string csv_header();
void write_csv(const RunLog& log, std::ostream& out);

/// Mean test accuracy over the last `window` rounds of a run.
double tail_accuracy(const StrategyRun& run, int window);

/// Per strategy: final and tail (last 10 rounds) accuracy for each seed with
/// mean and sample standard deviation.
nlohmann::json summarize(std::span<const RunLog> logs);

}  // namespace fedauto
