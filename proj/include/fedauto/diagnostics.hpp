#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedauto/aggregation.hpp"
#include "fedauto/data.hpp"
#include "fedauto/model.hpp"

namespace fedauto {

struct ChiSquare {
  double value = 0.0;
  /// q_c > 0 where p_c = 0; value is then +infinity.
  bool infinite = false;
};

/// sum_c (q_c - p_c)^2 / p_c with the reference p in the denominator. Entries
/// with p_c = q_c = 0 contribute nothing.
ChiSquare chi_square(std::span<const double> q, std::span<const double> p);

/// beta_s alpha_s + beta_miss alpha_miss + sum_i beta_i alpha_i.
ClassDistribution effective_distribution(const AggregationWeights& weights,
                                         const ClassDistribution& alpha_s,
                                         const ClassDistribution* alpha_miss,
                                         std::span<const ClassDistribution> client_alphas);

/// Dataset-size weights (p_s, p_1..p_N) against the realized (beta_s, beta_i).
ChiSquare chi_square_p_beta(const AggregationWeights& weights, double p_s,
                            std::span<const double> p_clients);

struct RoundRecord {
  int round = 0;
  std::string strategy;
  ConnectivityMask mask;
  AggregationWeights weights;
  std::size_t connected_count = 0;
  double chi2_p_beta = 0.0;
  double chi2_alpha_g_tilde = 0.0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  /// Present only on diagnostic rounds.
  std::optional<double> global_grad_norm_sq;
  std::vector<std::string> flags;
};

/// Per-(node, class) gradient deviations at one model. Nodes are ordered
/// server first, then clients; absent cells are empty optionals.
struct Heterogeneity {
  std::vector<std::vector<std::optional<double>>> deviation;
  /// ||grad F_g(w)||.
  double global_grad_norm = 0.0;
  /// grad F_{g,c}(w) and grad F_j(w), kept for the class-decomposition check.
  std::vector<std::vector<double>> global_class_gradients;
  std::vector<std::vector<double>> node_gradients;
  std::vector<std::vector<std::vector<double>>> node_class_gradients;
};

/// V_{j,c} = ||grad F_{j,c}(w) - grad F_{g,c}(w)|| with full-batch per-class
/// gradients, and G = ||grad F_g(w)||. Point estimates at `model`, not suprema.
/// `alpha_g` weights the class gradients into grad F_g.
Heterogeneity estimate_heterogeneity(const ModelParams& model,
                                     std::span<const LabeledDataset> node_data,
                                     const ClassDistribution& alpha_g);

struct BoundTerms {
  /// Non-i.i.d. term from the local class deviations and drift.
  double term_a = 0.0;
  /// Unreliability term: chi2_{p||beta} times the heterogeneity mass plus the
  /// averaged chi2_{alpha_g||alpha~} G^2.
  double term_b = 0.0;
  double term_b_weight_part = 0.0;
  double term_b_class_part = 0.0;
};

/// Per-round contributions to the two bracketed convergence-bound terms; their
/// mean over rounds gives the terms themselves. The class-mismatch factor
/// enters once per node, not once per class. `node_alphas` and `p` follow
/// the node order of `het` (server first); `total_steps` is T = R E.
std::vector<BoundTerms> bound_terms(std::span<const RoundRecord> records,
                                    const Heterogeneity& het,
                                    std::span<const ClassDistribution> node_alphas,
                                    const ClassDistribution& alpha_g, std::span<const double> p,
                                    double total_steps);

}  // namespace fedauto
