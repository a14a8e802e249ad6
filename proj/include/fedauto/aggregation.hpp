#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedauto/data.hpp"
#include "fedauto/model.hpp"

namespace fedauto {

enum class Participation { Full, Partial };

/// Selection slots of one round. `selected` may repeat a client under
/// sampling with replacement; `connected[k]` belongs to slot k.
struct ConnectivityMask {
  std::vector<int> selected;
  std::vector<bool> connected;

  /// Distinct connected client ids, ascending.
  std::vector<int> connected_clients() const;
  std::size_t connected_slots() const;
};

/// Full participation with every client connected.
ConnectivityMask all_connected(int num_clients);

struct AggregationWeights {
  double beta_s = 0.0;
  double beta_miss = 0.0;
  /// One entry per client; zero for unselected or disconnected clients.
  std::vector<double> beta_clients;
  /// False only for TF-Aggregation, whose weights are not rescaled to sum to one.
  bool normalized = true;
  /// Set when no selected client connected.
  bool degenerate = false;

  double sum() const;
};

/// Classes that no connected client holds; every class when none connected.
std::vector<int> detect_missing_classes(std::span<const ClassDistribution> connected, int num_classes);

/// Heuristic weights. Full: beta_j = p_j / (p_s + sum of connected p_i).
/// Partial: beta_s = p_s and each connected slot gets (1 - p_s) / slots.
AggregationWeights fedavg_weights(const ConnectivityMask& mask, double p_s,
                                  std::span<const double> p_clients, Participation mode);

/// The same rule from dataset sizes; with every client connected in Full mode
/// the weights are bitwise equal to size_j / total.
AggregationWeights fedavg_weights(const ConnectivityMask& mask, std::size_t server_size,
                                  std::span<const std::size_t> client_sizes,
                                  Participation mode);

struct WlsOptions {
  double tolerance = 1e-10;
  int max_iterations = 10000;
  /// Active-set refinement from the current iterate every this many steps.
  int polish_interval = 50;
  bool record_trace = false;
};

struct WlsResult {
  std::vector<double> weights;
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  std::vector<double> objective_trace;
};

/// Minimizes sum_c (t_c - m_c - sum_k A_ck x_k)^2 / t_c over x >= 0 with
/// sum(x) = budget, where t is the target distribution, m the contribution of
/// the fixed weights and A's columns the free distributions. Classes with
/// t_c = 0 are left out of the sum.
WlsResult solve_constrained_wls(const ClassDistribution& target,
                                std::span<const ClassDistribution> columns,
                                std::span<const double> fixed_mix, double budget,
                                const WlsOptions& options = {});

/// The objective of solve_constrained_wls at a given x.
double wls_objective(const ClassDistribution& target, std::span<const ClassDistribution> columns,
                     std::span<const double> fixed_mix, std::span<const double> x);

struct FedAutoOptions {
  WlsOptions wls;
  /// Zero connected clients: split the server's unit budget between the
  /// server and compensatory columns by the same objective instead of
  /// beta_s = 1.
  bool relax_zero_connected = false;
};

/// beta_s = 1 / (1 + connected clients); beta_miss and the connected
/// clients' weights minimize the chi-square mismatch to alpha_g with the
/// remaining budget. Pass alpha_miss = nullptr when no class is missing.
AggregationWeights fedauto_weights(const ConnectivityMask& mask, const ClassDistribution& alpha_g,
                                   const ClassDistribution& alpha_s,
                                   const ClassDistribution* alpha_miss,
                                   std::span<const ClassDistribution> client_alphas,
                                   const FedAutoOptions& options = {});

enum class AblationVariant { Full, NoModule1, NoModule2 };

/// NoModule1 drops the compensatory column; NoModule2 keeps it but averages:
/// beta_miss = beta_i = n / (1 + n)^2 with missing classes, otherwise
/// beta_i = 1 / (1 + n), with n connected clients.
AggregationWeights ablation_weights(AblationVariant variant, const ConnectivityMask& mask,
                                    const ClassDistribution& alpha_g,
                                    const ClassDistribution& alpha_s,
                                    const ClassDistribution* alpha_miss,
                                    std::span<const ClassDistribution> client_alphas,
                                    const FedAutoOptions& options = {});

/// beta_s w_s + beta_miss w_miss + sum_i beta_i w_i, summed in that order.
/// Client models with zero weight are never read.
ModelParams aggregate(const AggregationWeights& weights, const ModelParams& server,
                      const ModelParams* compensatory, std::span<const ModelParams> clients);

/// s_i proportional to sqrt(p_i / (1 - eps0_i)) over clients with
/// eps0_i <= eps_th, zero elsewhere. All zeros when no client is eligible.
std::vector<double> tf_selection_probabilities(std::span<const double> p_clients,
                                               std::span<const double> eps0, double eps_th);

/// Each connected slot of client i adds p_i / (K s_i (1 - eps0_i)); no server
/// term and no renormalization.
AggregationWeights tf_aggregation_weights(const ConnectivityMask& mask,
                                          std::span<const double> p_clients,
                                          std::span<const double> eps0,
                                          std::span<const double> selection_probs);

/// w <- w - gamma_g (r - tau) (w_global_prev - w).
ModelParams fedawe_correct(const ModelParams& local, const ModelParams& global_prev, int round,
                           int last_success, double gamma_g);

struct ScaffoldGlobal {
  ModelParams model;
  std::vector<double> server_cv;
  bool degenerate = false;
};

/// w = w_prev + (gamma_g / n) sum (w_i - w_prev) over the n connected clients;
/// c = c + (1 / N) sum (c_i+ - c_i) over the same clients.
ScaffoldGlobal scaffold_global_update(const ModelParams& global_prev,
                                      std::span<const ModelParams> client_models,
                                      const std::vector<double>& server_cv,
                                      std::span<const std::vector<double>> old_client_cvs,
                                      std::span<const std::vector<double>> new_client_cvs,
                                      const ConnectivityMask& mask, double gamma_g,
                                      int num_clients);

}  // namespace fedauto
