#include "fedauto/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedauto/errors.hpp"
#include "fedauto/simplex.hpp"

namespace fedauto {

std::vector<int> ConnectivityMask::connected_clients() const {
  std::vector<int> out;
  for (std::size_t k = 0; k < selected.size(); ++k) {
    if (connected[k]) out.push_back(selected[k]);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::size_t ConnectivityMask::connected_slots() const {
  return static_cast<std::size_t>(std::count(connected.begin(), connected.end(), true));
}

ConnectivityMask all_connected(int num_clients) {
  ConnectivityMask mask;
  mask.selected.resize(static_cast<std::size_t>(num_clients));
  std::iota(mask.selected.begin(), mask.selected.end(), 0);
  mask.connected.assign(mask.selected.size(), true);
  return mask;
}

double AggregationWeights::sum() const {
  double s = beta_s + beta_miss;
  for (double b : beta_clients) s += b;
  return s;
}

namespace {

void check_mask(const ConnectivityMask& mask, std::size_t num_clients) {
  if (mask.selected.size() != mask.connected.size()) {
    throw ContractError("connectivity mask needs one flag per selected slot");
  }
  for (int i : mask.selected) {
    if (i < 0 || static_cast<std::size_t>(i) >= num_clients) {
      throw ContractError("selected client id out of range");
    }
  }
}

}  // namespace

std::vector<int> detect_missing_classes(std::span<const ClassDistribution> connected,
                                        int num_classes) {
  std::vector<int> missing;
  for (int c = 0; c < num_classes; ++c) {
    const bool held = std::any_of(connected.begin(), connected.end(), [c](const auto& a) {
      return a.alpha.at(static_cast<std::size_t>(c)) > 0.0;
    });
    if (!held) missing.push_back(c);
  }
  return missing;
}

AggregationWeights fedavg_weights(const ConnectivityMask& mask, double p_s,
                                  std::span<const double> p_clients, Participation mode) {
  check_mask(mask, p_clients.size());
  if (!(p_s >= 0.0)) throw ParameterError("server weight must be non-negative");
  AggregationWeights w;
  w.beta_clients.assign(p_clients.size(), 0.0);
  const auto connected = mask.connected_clients();
  w.degenerate = connected.empty();
  if (mode == Participation::Full) {
    double denom = p_s;
    for (int i : connected) denom += p_clients[static_cast<std::size_t>(i)];
    if (!(denom > 0.0)) throw ParameterError("no contributing weight mass");
    w.beta_s = p_s / denom;
    for (int i : connected) {
      w.beta_clients[static_cast<std::size_t>(i)] = p_clients[static_cast<std::size_t>(i)] / denom;
    }
    return w;
  }
  const std::size_t slots = mask.connected_slots();
  if (slots == 0) {
    w.beta_s = 1.0;
    return w;
  }
  w.beta_s = p_s;
  const double share = (1.0 - p_s) / static_cast<double>(slots);
  for (std::size_t k = 0; k < mask.selected.size(); ++k) {
    if (mask.connected[k]) w.beta_clients[static_cast<std::size_t>(mask.selected[k])] += share;
  }
  return w;
}

AggregationWeights fedavg_weights(const ConnectivityMask& mask, std::size_t server_size,
                                  std::span<const std::size_t> client_sizes,
                                  Participation mode) {
  check_mask(mask, client_sizes.size());
  const std::size_t total =
      std::accumulate(client_sizes.begin(), client_sizes.end(), server_size);
  if (total == 0) throw ParameterError("no samples in the partition");
  if (mode == Participation::Partial) {
    std::vector<double> p(client_sizes.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = static_cast<double>(client_sizes[i]) / static_cast<double>(total);
    }
    return fedavg_weights(mask, static_cast<double>(server_size) / static_cast<double>(total), p,
                          mode);
  }
  AggregationWeights w;
  w.beta_clients.assign(client_sizes.size(), 0.0);
  const auto connected = mask.connected_clients();
  w.degenerate = connected.empty();
  std::size_t denom = server_size;
  for (int i : connected) denom += client_sizes[static_cast<std::size_t>(i)];
  if (denom == 0) throw ParameterError("no contributing weight mass");
  const auto d = static_cast<double>(denom);
  w.beta_s = static_cast<double>(server_size) / d;
  for (int i : connected) {
    const auto k = static_cast<std::size_t>(i);
    w.beta_clients[k] = static_cast<double>(client_sizes[k]) / d;
  }
  return w;
}

namespace {

// Whitened least-squares form of the chi-square objective: ||b - M x||^2.
struct WlsProblem {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> m;  // row-major rows x cols
  std::vector<double> b;

  double objective(std::span<const double> x) const {
    double f = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      double v = b[r];
      for (std::size_t k = 0; k < cols; ++k) v -= m[r * cols + k] * x[k];
      f += v * v;
    }
    return f;
  }

  std::vector<double> gradient(std::span<const double> x) const {
    std::vector<double> g(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      double v = -b[r];
      for (std::size_t k = 0; k < cols; ++k) v += m[r * cols + k] * x[k];
      for (std::size_t k = 0; k < cols; ++k) g[k] += 2.0 * m[r * cols + k] * v;
    }
    return g;
  }
};

WlsProblem build_problem(const ClassDistribution& target,
                         std::span<const ClassDistribution> columns,
                         std::span<const double> fixed_mix) {
  const std::size_t classes = target.size();
  if (fixed_mix.size() != classes) throw ParameterError("fixed mixture length mismatch");
  for (const auto& col : columns) {
    if (col.size() != classes) throw ParameterError("column distribution length mismatch");
  }
  WlsProblem p;
  p.cols = columns.size();
  for (std::size_t c = 0; c < classes; ++c) {
    const double t = target[c];
    if (t < 0.0) throw ParameterError("target distribution has a negative entry");
    if (t == 0.0) continue;
    const double s = 1.0 / std::sqrt(t);
    p.b.push_back((t - fixed_mix[c]) * s);
    for (const auto& col : columns) p.m.push_back(col[c] * s);
    ++p.rows;
  }
  return p;
}

double kkt_residual(const WlsProblem& p, std::span<const double> x, double budget) {
  const auto g = p.gradient(x);
  std::vector<double> y(x.begin(), x.end());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] -= g[k];
  project_onto_simplex(y, budget);
  double r = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) r = std::max(r, std::abs(x[k] - y[k]));
  return r;
}

// Solves G y = h for the symmetric PSD G, leaving y_j = 0 for directions that a
// pivoted Cholesky finds dependent on earlier pivots.
std::vector<double> solve_psd(std::vector<double> g, std::vector<double> h, std::size_t n) {
  std::vector<bool> used(n, false);
  std::vector<std::size_t> pivots;
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, g[i * n + i]);
  const double tol = 1e-13 * std::max(max_diag, 1e-300);
  std::vector<double> schur = g;
  for (std::size_t step = 0; step < n; ++step) {
    std::size_t p = n;
    double best = tol;
    for (std::size_t i = 0; i < n; ++i) {
      if (!used[i] && schur[i * n + i] > best) {
        best = schur[i * n + i];
        p = i;
      }
    }
    if (p == n) break;
    used[p] = true;
    pivots.push_back(p);
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      const double f = schur[i * n + p] / best;
      for (std::size_t j = 0; j < n; ++j) {
        if (!used[j]) schur[i * n + j] -= f * schur[p * n + j];
      }
    }
  }
  // Gaussian elimination with partial pivoting on the pivot block.
  const std::size_t m = pivots.size();
  std::vector<double> a(m * (m + 1));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) a[i * (m + 1) + j] = g[pivots[i] * n + pivots[j]];
    a[i * (m + 1) + m] = h[pivots[i]];
  }
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < m; ++r) {
      if (std::abs(a[r * (m + 1) + col]) > std::abs(a[piv * (m + 1) + col])) piv = r;
    }
    for (std::size_t j = 0; j <= m; ++j) std::swap(a[col * (m + 1) + j], a[piv * (m + 1) + j]);
    const double d = a[col * (m + 1) + col];
    for (std::size_t r = 0; r < m; ++r) {
      if (r == col) continue;
      const double f = a[r * (m + 1) + col] / d;
      for (std::size_t j = col; j <= m; ++j) a[r * (m + 1) + j] -= f * a[col * (m + 1) + j];
    }
  }
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) y[pivots[i]] = a[i * (m + 1) + m] / a[i * (m + 1) + i];
  return y;
}

// Minimizer of the objective over {sum(y) = budget, y_k = 0 off `support`},
// with `ref` in the support carrying the equality. Directions the pivoted
// solve finds dependent are left at zero, which still gives a minimizer.
std::vector<double> support_minimizer(const WlsProblem& p, const std::vector<std::size_t>& support,
                                      std::size_t ref, double budget) {
  std::vector<double> z(p.cols, 0.0);
  std::vector<std::size_t> free;
  for (std::size_t k : support) {
    if (k != ref) free.push_back(k);
  }
  if (free.empty()) {
    z[ref] = budget;
    return z;
  }
  // z_ref = budget - sum(y): minimize ||(b - budget M_ref) - sum_j y_j (M_j - M_ref)||^2.
  const std::size_t n = free.size();
  std::vector<double> g(n * n, 0.0), h(n, 0.0);
  std::vector<double> col(n);
  for (std::size_t r = 0; r < p.rows; ++r) {
    const double mref = p.m[r * p.cols + ref];
    const double rhs = p.b[r] - budget * mref;
    for (std::size_t j = 0; j < n; ++j) col[j] = p.m[r * p.cols + free[j]] - mref;
    for (std::size_t i = 0; i < n; ++i) {
      h[i] += col[i] * rhs;
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += col[i] * col[j];
    }
  }
  const auto y = solve_psd(std::move(g), std::move(h), n);
  double used = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    z[free[j]] = y[j];
    used += y[j];
  }
  z[ref] = budget - used;
  return z;
}

// Primal active-set iterations from the feasible point x: minimize on the
// current support, step back to the boundary when that leaves the simplex,
// and release the coordinate with the most negative reduced gradient. The
// objective never increases; x is replaced only when it improves.
bool active_set_refine(const WlsProblem& p, std::vector<double>& x, double budget) {
  if (budget == 0.0) return false;
  std::vector<double> cur = x;
  std::vector<bool> in(p.cols, false);
  for (std::size_t k = 0; k < p.cols; ++k) in[k] = cur[k] > 0.0;
  const int max_rounds = 10 * static_cast<int>(p.cols) + 50;
  for (int round = 0; round < max_rounds; ++round) {
    for (std::size_t inner = 0; inner <= p.cols; ++inner) {
      std::vector<std::size_t> support;
      for (std::size_t k = 0; k < p.cols; ++k) {
        if (in[k]) support.push_back(k);
      }
      const std::size_t ref = *std::max_element(
          support.begin(), support.end(), [&](auto a, auto b) { return cur[a] < cur[b]; });
      const auto z = support_minimizer(p, support, ref, budget);
      double alpha = 1.0;
      std::size_t blocking = p.cols;
      for (std::size_t k : support) {
        if (z[k] < 0.0) {
          const double a = cur[k] / (cur[k] - z[k]);
          if (a < alpha) {
            alpha = a;
            blocking = k;
          }
        }
      }
      for (std::size_t k : support) cur[k] += alpha * (z[k] - cur[k]);
      if (blocking < p.cols) cur[blocking] = 0.0;
      for (std::size_t k : support) {
        if (cur[k] <= 0.0) {
          cur[k] = 0.0;
          in[k] = false;
        }
      }
      if (blocking == p.cols) break;
    }
    // Re-anchor the equality so rounding never leaves the budget.
    double total = 0.0;
    std::size_t largest = 0;
    for (std::size_t k = 0; k < p.cols; ++k) {
      total += cur[k];
      if (cur[k] > cur[largest]) largest = k;
    }
    cur[largest] += budget - total;

    const auto g = p.gradient(cur);
    double nu = 0.0;
    int members = 0;
    for (std::size_t k = 0; k < p.cols; ++k) {
      if (in[k]) {
        nu += g[k];
        ++members;
      }
    }
    nu /= members;
    std::size_t enter = p.cols;
    double most = -1e-13 * std::max(1.0, std::abs(nu));
    for (std::size_t k = 0; k < p.cols; ++k) {
      if (!in[k] && g[k] - nu < most) {
        most = g[k] - nu;
        enter = k;
      }
    }
    if (enter == p.cols) break;
    in[enter] = true;
  }
  if (p.objective(cur) > p.objective(x)) return false;
  x = std::move(cur);
  return true;
}

}  // namespace

double wls_objective(const ClassDistribution& target, std::span<const ClassDistribution> columns,
                     std::span<const double> fixed_mix, std::span<const double> x) {
  if (x.size() != columns.size()) throw ParameterError("weight vector length mismatch");
  return build_problem(target, columns, fixed_mix).objective(x);
}

WlsResult solve_constrained_wls(const ClassDistribution& target,
                                std::span<const ClassDistribution> columns,
                                std::span<const double> fixed_mix, double budget,
                                const WlsOptions& options) {
  if (columns.empty()) throw ParameterError("weight optimization has no free weights");
  if (!(budget >= 0.0)) throw ParameterError("weight budget must be non-negative");
  const WlsProblem p = build_problem(target, columns, fixed_mix);
  const std::size_t k = p.cols;

  // Lipschitz constant of the gradient: 2 lambda_max(M^T M), bounded by
  // Gershgorin row sums.
  double lipschitz = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double q = 0.0;
      for (std::size_t r = 0; r < p.rows; ++r) q += p.m[r * k + i] * p.m[r * k + j];
      row += std::abs(q);
    }
    lipschitz = std::max(lipschitz, 2.0 * row);
  }
  const double step = lipschitz > 0.0 ? 1.0 / lipschitz : 1.0;

  WlsResult out;
  std::vector<double> x(k, budget / static_cast<double>(k));
  double f = p.objective(x);
  if (options.record_trace) out.objective_trace.push_back(f);
  int it = 0;
  for (;; ++it) {
    if (options.polish_interval > 0 && it % options.polish_interval == 0 &&
        active_set_refine(p, x, budget)) {
      f = p.objective(x);
      if (options.record_trace) out.objective_trace.push_back(f);
    }
    out.kkt_residual = kkt_residual(p, x, budget);
    if (out.kkt_residual <= options.tolerance || it >= options.max_iterations) break;
    const auto g = p.gradient(x);
    std::vector<double> next(x);
    for (std::size_t j = 0; j < k; ++j) next[j] -= step * g[j];
    project_onto_simplex(next, budget);
    const double fn = p.objective(next);
    // A 1/L step never increases f; rounding at the optimum can, so keep x.
    if (fn > f) {
      active_set_refine(p, x, budget);
      f = p.objective(x);
      out.kkt_residual = kkt_residual(p, x, budget);
      break;
    }
    x = std::move(next);
    f = fn;
    if (options.record_trace) out.objective_trace.push_back(f);
  }
  out.iterations = it;
  out.objective = f;
  out.weights = std::move(x);
  return out;
}

namespace {

std::vector<double> scaled(const ClassDistribution& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t c = 0; c < a.size(); ++c) out[c] = s * a[c];
  return out;
}

AggregationWeights optimized_weights(const ConnectivityMask& mask,
                                     const ClassDistribution& alpha_g,
                                     const ClassDistribution& alpha_s,
                                     const ClassDistribution* alpha_miss,
                                     std::span<const ClassDistribution> client_alphas,
                                     const FedAutoOptions& options) {
  check_mask(mask, client_alphas.size());
  AggregationWeights w;
  w.beta_clients.assign(client_alphas.size(), 0.0);
  const auto connected = mask.connected_clients();
  if (connected.empty()) {
    w.degenerate = true;
    if (options.relax_zero_connected && alpha_miss != nullptr) {
      const std::vector<ClassDistribution> cols{alpha_s, *alpha_miss};
      const std::vector<double> none(alpha_g.size(), 0.0);
      const auto sol = solve_constrained_wls(alpha_g, cols, none, 1.0, options.wls);
      w.beta_s = sol.weights[0];
      w.beta_miss = sol.weights[1];
    } else {
      w.beta_s = 1.0;
    }
    return w;
  }
  const auto n = static_cast<double>(connected.size());
  w.beta_s = 1.0 / (1.0 + n);
  std::vector<ClassDistribution> cols;
  if (alpha_miss != nullptr) cols.push_back(*alpha_miss);
  for (int i : connected) cols.push_back(client_alphas[static_cast<std::size_t>(i)]);
  const auto sol =
      solve_constrained_wls(alpha_g, cols, scaled(alpha_s, w.beta_s), n / (1.0 + n), options.wls);
  std::size_t k = 0;
  if (alpha_miss != nullptr) w.beta_miss = sol.weights[k++];
  for (int i : connected) w.beta_clients[static_cast<std::size_t>(i)] = sol.weights[k++];
  return w;
}

}  // namespace

AggregationWeights fedauto_weights(const ConnectivityMask& mask, const ClassDistribution& alpha_g,
                                   const ClassDistribution& alpha_s,
                                   const ClassDistribution* alpha_miss,
                                   std::span<const ClassDistribution> client_alphas,
                                   const FedAutoOptions& options) {
  return optimized_weights(mask, alpha_g, alpha_s, alpha_miss, client_alphas, options);
}

AggregationWeights ablation_weights(AblationVariant variant, const ConnectivityMask& mask,
                                    const ClassDistribution& alpha_g,
                                    const ClassDistribution& alpha_s,
                                    const ClassDistribution* alpha_miss,
                                    std::span<const ClassDistribution> client_alphas,
                                    const FedAutoOptions& options) {
  switch (variant) {
    case AblationVariant::Full:
      return fedauto_weights(mask, alpha_g, alpha_s, alpha_miss, client_alphas, options);
    case AblationVariant::NoModule1:
      return fedauto_weights(mask, alpha_g, alpha_s, nullptr, client_alphas, options);
    case AblationVariant::NoModule2: break;
  }
  check_mask(mask, client_alphas.size());
  AggregationWeights w;
  w.beta_clients.assign(client_alphas.size(), 0.0);
  const auto connected = mask.connected_clients();
  w.degenerate = connected.empty();
  const auto n = static_cast<double>(connected.size());
  w.beta_s = 1.0 / (1.0 + n);
  const double share = alpha_miss != nullptr ? n / ((1.0 + n) * (1.0 + n)) : 1.0 / (1.0 + n);
  if (alpha_miss != nullptr) w.beta_miss = share;
  for (int i : connected) w.beta_clients[static_cast<std::size_t>(i)] = share;
  return w;
}

ModelParams aggregate(const AggregationWeights& weights, const ModelParams& server,
                      const ModelParams* compensatory, std::span<const ModelParams> clients) {
  if (weights.beta_clients.size() != clients.size()) {
    throw ContractError("one client weight per client model is required");
  }
  ModelParams out{server.arch, std::vector<double>(server.theta.size(), 0.0)};
  auto add = [&](double beta, const ModelParams& m) {
    if (m.theta.size() != out.theta.size()) throw ContractError("model dimensions differ");
    for (std::size_t k = 0; k < out.theta.size(); ++k) out.theta[k] += beta * m.theta[k];
  };
  if (weights.beta_s != 0.0) add(weights.beta_s, server);
  if (weights.beta_miss != 0.0) {
    if (compensatory == nullptr) throw ContractError("beta_miss > 0 without a compensatory model");
    add(weights.beta_miss, *compensatory);
  }
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (weights.beta_clients[i] != 0.0) add(weights.beta_clients[i], clients[i]);
  }
  return out;
}

std::vector<double> tf_selection_probabilities(std::span<const double> p_clients,
                                               std::span<const double> eps0, double eps_th) {
  if (p_clients.size() != eps0.size()) throw ParameterError("p and epsilon length mismatch");
  std::vector<double> s(p_clients.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (eps0[i] <= eps_th && eps0[i] < 1.0) {
      s[i] = std::sqrt(p_clients[i] / (1.0 - eps0[i]));
      total += s[i];
    }
  }
  if (total > 0.0) {
    for (auto& v : s) v /= total;
  }
  return s;
}

AggregationWeights tf_aggregation_weights(const ConnectivityMask& mask,
                                          std::span<const double> p_clients,
                                          std::span<const double> eps0,
                                          std::span<const double> selection_probs) {
  check_mask(mask, p_clients.size());
  if (eps0.size() != p_clients.size() || selection_probs.size() != p_clients.size()) {
    throw ParameterError("TF-Aggregation inputs differ in length");
  }
  AggregationWeights w;
  w.normalized = false;
  w.beta_clients.assign(p_clients.size(), 0.0);
  const auto k_slots = static_cast<double>(mask.selected.size());
  for (std::size_t k = 0; k < mask.selected.size(); ++k) {
    if (!mask.connected[k]) continue;
    const auto i = static_cast<std::size_t>(mask.selected[k]);
    if (!(selection_probs[i] > 0.0)) throw ContractError("selected client has zero selection probability");
    w.beta_clients[i] += p_clients[i] / (k_slots * selection_probs[i] * (1.0 - eps0[i]));
  }
  w.degenerate = mask.connected_slots() == 0;
  return w;
}

ModelParams fedawe_correct(const ModelParams& local, const ModelParams& global_prev, int round,
                           int last_success, double gamma_g) {
  if (local.theta.size() != global_prev.theta.size()) throw ContractError("model dimensions differ");
  ModelParams out = local;
  const double f = gamma_g * static_cast<double>(round - last_success);
  for (std::size_t k = 0; k < out.theta.size(); ++k) {
    out.theta[k] -= f * (global_prev.theta[k] - local.theta[k]);
  }
  return out;
}

ScaffoldGlobal scaffold_global_update(const ModelParams& global_prev,
                                      std::span<const ModelParams> client_models,
                                      const std::vector<double>& server_cv,
                                      std::span<const std::vector<double>> old_client_cvs,
                                      std::span<const std::vector<double>> new_client_cvs,
                                      const ConnectivityMask& mask, double gamma_g,
                                      int num_clients) {
  check_mask(mask, client_models.size());
  if (num_clients < 1) throw ParameterError("SCAFFOLD needs N >= 1");
  ScaffoldGlobal out{global_prev, server_cv, false};
  const auto connected = mask.connected_clients();
  if (connected.empty()) {
    out.degenerate = true;
    return out;
  }
  const std::size_t d = global_prev.theta.size();
  const double step = gamma_g / static_cast<double>(connected.size());
  const double cv_step = 1.0 / static_cast<double>(num_clients);
  for (int i : connected) {
    const auto k = static_cast<std::size_t>(i);
    const auto& w = client_models[k].theta;
    const auto& c_old = old_client_cvs[k];
    const auto& c_new = new_client_cvs[k];
    if (w.size() != d || c_old.size() != d || c_new.size() != d || server_cv.size() != d) {
      throw ContractError("SCAFFOLD inputs differ in dimension");
    }
    for (std::size_t j = 0; j < d; ++j) {
      out.model.theta[j] += step * (w[j] - global_prev.theta[j]);
      out.server_cv[j] += cv_step * (c_new[j] - c_old[j]);
    }
  }
  return out;
}

}  // namespace fedauto
