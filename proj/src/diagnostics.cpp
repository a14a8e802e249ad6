#include "fedauto/diagnostics.hpp"

#include <cmath>

#include "fedauto/errors.hpp"

namespace fedauto {

ChiSquare chi_square(std::span<const double> q, std::span<const double> p) {
  if (q.size() != p.size()) throw ParameterError("chi-square operands differ in length");
  ChiSquare out;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] < 0.0) throw ParameterError("chi-square reference has a negative entry");
    const double diff = q[c] - p[c];
    if (p[c] == 0.0) {
      if (q[c] != 0.0) out.infinite = true;
      continue;
    }
    out.value += diff * diff / p[c];
  }
  if (out.infinite) out.value = std::numeric_limits<double>::infinity();
  return out;
}

ClassDistribution effective_distribution(const AggregationWeights& weights,
                                         const ClassDistribution& alpha_s,
                                         const ClassDistribution* alpha_miss,
                                         std::span<const ClassDistribution> client_alphas) {
  if (weights.beta_clients.size() != client_alphas.size()) {
    throw ParameterError("one client distribution per client weight is required");
  }
  const std::size_t classes = alpha_s.size();
  ClassDistribution out{std::vector<double>(classes, 0.0)};
  auto add = [&](double beta, const ClassDistribution& a) {
    if (a.size() != classes) throw ParameterError("class distributions differ in length");
    for (std::size_t c = 0; c < classes; ++c) out.alpha[c] += beta * a[c];
  };
  add(weights.beta_s, alpha_s);
  if (weights.beta_miss != 0.0) {
    if (alpha_miss == nullptr) throw ContractError("beta_miss > 0 without a compensatory distribution");
    add(weights.beta_miss, *alpha_miss);
  }
  for (std::size_t i = 0; i < client_alphas.size(); ++i) {
    if (weights.beta_clients[i] != 0.0) add(weights.beta_clients[i], client_alphas[i]);
  }
  return out;
}

ChiSquare chi_square_p_beta(const AggregationWeights& weights, double p_s,
                            std::span<const double> p_clients) {
  if (weights.beta_clients.size() != p_clients.size()) {
    throw ParameterError("one dataset weight per client weight is required");
  }
  std::vector<double> beta{weights.beta_s};
  std::vector<double> p{p_s};
  beta.insert(beta.end(), weights.beta_clients.begin(), weights.beta_clients.end());
  p.insert(p.end(), p_clients.begin(), p_clients.end());
  return chi_square(beta, p);
}

Heterogeneity estimate_heterogeneity(const ModelParams& model,
                                     std::span<const LabeledDataset> node_data,
                                     const ClassDistribution& alpha_g) {
  if (node_data.empty()) throw ParameterError("no node datasets");
  const auto classes = static_cast<std::size_t>(model.arch.num_classes);
  if (alpha_g.size() != classes) throw ParameterError("alpha_g length does not match the model");
  const std::size_t dim = model.theta.size();
  const std::size_t nodes = node_data.size();

  Heterogeneity het;
  het.node_class_gradients.assign(nodes, std::vector<std::vector<double>>(classes));
  het.node_gradients.resize(nodes);
  std::vector<std::vector<std::size_t>> counts(nodes, std::vector<std::size_t>(classes, 0));
  for (std::size_t j = 0; j < nodes; ++j) {
    const auto& data = node_data[j];
    if (data.size() == 0) throw ParameterError("node dataset is empty");
    het.node_gradients[j] = loss_and_gradient(model, data).gradient;
    std::vector<IndexList> by_class(classes);
    for (std::size_t i = 0; i < data.size(); ++i) {
      by_class[static_cast<std::size_t>(data.label(i))].push_back(i);
    }
    for (std::size_t c = 0; c < classes; ++c) {
      counts[j][c] = by_class[c].size();
      if (!by_class[c].empty()) {
        het.node_class_gradients[j][c] = loss_and_gradient(model, data, by_class[c]).gradient;
      }
    }
  }

  // The global class-c gradient is the sample-weighted mean of node class-c gradients.
  het.global_class_gradients.assign(classes, std::vector<double>(dim, 0.0));
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t total = 0;
    for (std::size_t j = 0; j < nodes; ++j) total += counts[j][c];
    if (total == 0) continue;
    for (std::size_t j = 0; j < nodes; ++j) {
      if (counts[j][c] == 0) continue;
      const double w = static_cast<double>(counts[j][c]) / static_cast<double>(total);
      for (std::size_t k = 0; k < dim; ++k) {
        het.global_class_gradients[c][k] += w * het.node_class_gradients[j][c][k];
      }
    }
  }

  std::vector<double> global(dim, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = 0; k < dim; ++k) global[k] += alpha_g[c] * het.global_class_gradients[c][k];
  }
  double g2 = 0.0;
  for (double v : global) g2 += v * v;
  het.global_grad_norm = std::sqrt(g2);

  het.deviation.assign(nodes, std::vector<std::optional<double>>(classes));
  for (std::size_t j = 0; j < nodes; ++j) {
    for (std::size_t c = 0; c < classes; ++c) {
      if (counts[j][c] == 0) continue;
      double d2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double d = het.node_class_gradients[j][c][k] - het.global_class_gradients[c][k];
        d2 += d * d;
      }
      het.deviation[j][c] = std::sqrt(d2);
    }
  }
  return het;
}

std::vector<BoundTerms> bound_terms(std::span<const RoundRecord> records,
                                    const Heterogeneity& het,
                                    std::span<const ClassDistribution> node_alphas,
                                    const ClassDistribution& alpha_g, std::span<const double> p,
                                    double total_steps) {
  const std::size_t nodes = node_alphas.size();
  if (p.size() != nodes || het.deviation.size() != nodes) {
    throw ParameterError("node weights, distributions and heterogeneity table differ in size");
  }
  if (nodes < 2) throw ParameterError("bound terms need the server and at least one client");
  if (!(total_steps > 0.0)) throw ParameterError("total steps T must be positive");
  const double g2 = het.global_grad_norm * het.global_grad_norm;
  const double num_clients = static_cast<double>(nodes - 1);

  // Per node: sum_c alpha_jc V_jc^2 + chi2_{alpha_g||alpha_j} G^2.
  std::vector<double> node_term(nodes, 0.0);
  double weighted_v2 = 0.0;
  for (std::size_t j = 0; j < nodes; ++j) {
    double v2 = 0.0;
    for (std::size_t c = 0; c < alpha_g.size(); ++c) {
      const auto& v = het.deviation[j][c];
      if (v) v2 += node_alphas[j][c] * (*v) * (*v);
    }
    const auto chi = chi_square(node_alphas[j].alpha, alpha_g.alpha);
    node_term[j] = v2 + chi.value * g2;
    weighted_v2 += p[j] * v2;
  }

  const double scale_a = 8.0 / std::sqrt(total_steps * num_clients);
  std::vector<BoundTerms> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    BoundTerms t;
    const auto& w = rec.weights;
    if (w.beta_clients.size() + 1 != nodes) {
      throw ParameterError("record weights do not match the node count");
    }
    double a = w.beta_s * node_term[0];
    for (std::size_t i = 0; i < w.beta_clients.size(); ++i) a += w.beta_clients[i] * node_term[i + 1];
    t.term_a = scale_a * a;
    t.term_b_weight_part = 20.0 * rec.chi2_p_beta * weighted_v2;
    t.term_b_class_part = 20.0 * rec.chi2_alpha_g_tilde * g2;
    t.term_b = t.term_b_weight_part + t.term_b_class_part;
    out.push_back(t);
  }
  return out;
}

}  // namespace fedauto
