#pragma once

// Independent oracles for the unit and acceptance tests. Nothing here calls
// into the library's solvers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "fedauto/data.hpp"
#include "fedauto/model.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;  // row-major, rows x cols

/// Unconstrained least squares on the columns in `passive` via normal
/// equations solved by Gaussian elimination with partial pivoting.
inline std::vector<double> least_squares_subset(const Matrix& a, std::span<const double> b,
                                                const std::vector<std::size_t>& passive,
                                                std::size_t cols) {
  const std::size_t k = passive.size();
  Matrix g(k, std::vector<double>(k + 1, 0.0));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t r = 0; r < a.size(); ++r) g[i][j] += a[r][passive[i]] * a[r][passive[j]];
    }
    for (std::size_t r = 0; r < a.size(); ++r) g[i][k] += a[r][passive[i]] * b[r];
  }
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < k; ++r) {
      if (std::abs(g[r][c]) > std::abs(g[piv][c])) piv = r;
    }
    std::swap(g[c], g[piv]);
    if (std::abs(g[c][c]) < 1e-300) continue;
    for (std::size_t r = 0; r < k; ++r) {
      if (r == c) continue;
      const double f = g[r][c] / g[c][c];
      for (std::size_t j = c; j <= k; ++j) g[r][j] -= f * g[c][j];
    }
  }
  std::vector<double> x(cols, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    x[passive[i]] = std::abs(g[i][i]) < 1e-300 ? 0.0 : g[i][k] / g[i][i];
  }
  return x;
}

/// Lawson-Hanson active-set nonnegative least squares: min ||Ax - b|| s.t. x >= 0.
inline std::vector<double> nnls(const Matrix& a, std::span<const double> b) {
  const std::size_t m = a.size();
  const std::size_t n = m == 0 ? 0 : a[0].size();
  std::vector<double> x(n, 0.0);
  std::vector<bool> in_passive(n, false);
  auto gradient = [&] {
    std::vector<double> w(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t r = 0; r < m; ++r) {
        double ax = 0.0;
        for (std::size_t k = 0; k < n; ++k) ax += a[r][k] * x[k];
        w[j] += a[r][j] * (b[r] - ax);
      }
    }
    return w;
  };
  for (int outer = 0; outer < 3 * static_cast<int>(n) + 10; ++outer) {
    const auto w = gradient();
    std::size_t best = n;
    double best_w = 1e-14;
    for (std::size_t j = 0; j < n; ++j) {
      if (!in_passive[j] && w[j] > best_w) {
        best_w = w[j];
        best = j;
      }
    }
    if (best == n) break;
    in_passive[best] = true;
    for (int inner = 0; inner < 100; ++inner) {
      std::vector<std::size_t> passive;
      for (std::size_t j = 0; j < n; ++j) {
        if (in_passive[j]) passive.push_back(j);
      }
      const auto z = least_squares_subset(a, b, passive, n);
      bool feasible = true;
      for (std::size_t j : passive) feasible = feasible && z[j] > 0.0;
      if (feasible) {
        x = z;
        break;
      }
      double step = 1.0;
      for (std::size_t j : passive) {
        if (z[j] <= 0.0) step = std::min(step, x[j] / (x[j] - z[j]));
      }
      for (std::size_t j = 0; j < n; ++j) x[j] += step * (z[j] - x[j]);
      for (std::size_t j : passive) {
        if (x[j] <= 1e-15) {
          x[j] = 0.0;
          in_passive[j] = false;
        }
      }
    }
  }
  return x;
}

/// Mean softmax cross-entropy computed straight from the flat parameter layout.
inline double reference_loss(const fedauto::Arch& arch, const std::vector<double>& theta,
                             const fedauto::LabeledDataset& data, const fedauto::IndexList& batch) {
  const std::size_t d = arch.input_dim;
  const auto c = static_cast<std::size_t>(arch.num_classes);
  double total = 0.0;
  for (std::size_t i : batch) {
    const auto x = data.row(i);
    std::vector<double> z(c, 0.0);
    if (arch.kind == fedauto::Arch::Kind::Linear) {
      for (std::size_t k = 0; k < c; ++k) {
        z[k] = theta[c * d + k];
        for (std::size_t j = 0; j < d; ++j) z[k] += theta[k * d + j] * x[j];
      }
    } else {
      const std::size_t h = arch.hidden;
      std::vector<double> a(h);
      for (std::size_t u = 0; u < h; ++u) {
        double s = theta[h * d + u];
        for (std::size_t j = 0; j < d; ++j) s += theta[u * d + j] * x[j];
        a[u] = s > 0.0 ? s : 0.0;
      }
      const std::size_t off = h * d + h;
      for (std::size_t k = 0; k < c; ++k) {
        z[k] = theta[off + c * h + k];
        for (std::size_t u = 0; u < h; ++u) z[k] += theta[off + k * h + u] * a[u];
      }
    }
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    total += m + std::log(s) - z[static_cast<std::size_t>(data.label(i))];
  }
  return total / static_cast<double>(batch.size());
}

inline double residual_norm(const Matrix& a, std::span<const double> b, std::span<const double> x) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r) {
    double ax = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) ax += a[r][k] * x[k];
    s += (ax - b[r]) * (ax - b[r]);
  }
  return std::sqrt(s);
}

/// Objective sum_c (t_c - m_c - sum_k A_ck x_k)^2 / t_c over classes with t_c > 0.
inline double wls_value(std::span<const double> t, std::span<const double> m, const Matrix& cols,
                        std::span<const double> x) {
  double f = 0.0;
  for (std::size_t c = 0; c < t.size(); ++c) {
    if (t[c] <= 0.0) continue;
    double r = t[c] - m[c];
    for (std::size_t k = 0; k < cols.size(); ++k) r -= cols[k][c] * x[k];
    f += r * r / t[c];
  }
  return f;
}

/// Exact minimum of wls_value over {x >= 0, sum x = budget} by enumerating
/// supports: on each support the equality-constrained stationarity system is
/// solved directly and kept when feasible. `cols` holds one distribution per
/// free weight. Intended for at most ~10 columns.
inline double wls_minimum_by_supports(std::span<const double> t, std::span<const double> m,
                                      const Matrix& cols, double budget) {
  const std::size_t n = cols.size();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 1; mask < (std::size_t{1} << n); ++mask) {
    std::vector<std::size_t> s;
    for (std::size_t k = 0; k < n; ++k) {
      if (mask & (std::size_t{1} << k)) s.push_back(k);
    }
    const std::size_t q = s.size();
    // [H 1; 1' 0] [x; nu] = [g; budget] with H_ij = sum_c A_ci A_cj / t_c.
    Matrix a(q + 1, std::vector<double>(q + 2, 0.0));
    for (std::size_t i = 0; i < q; ++i) {
      for (std::size_t j = 0; j < q; ++j) {
        for (std::size_t c = 0; c < t.size(); ++c) {
          if (t[c] > 0.0) a[i][j] += cols[s[i]][c] * cols[s[j]][c] / t[c];
        }
      }
      a[i][q] = 1.0;
      a[q][i] = 1.0;
      for (std::size_t c = 0; c < t.size(); ++c) {
        if (t[c] > 0.0) a[i][q + 1] += cols[s[i]][c] * (t[c] - m[c]) / t[c];
      }
    }
    a[q][q + 1] = budget;
    bool singular = false;
    for (std::size_t c = 0; c <= q && !singular; ++c) {
      std::size_t piv = c;
      for (std::size_t r = c + 1; r <= q; ++r) {
        if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
      }
      std::swap(a[c], a[piv]);
      if (std::abs(a[c][c]) < 1e-12) {
        singular = true;
        break;
      }
      for (std::size_t r = 0; r <= q; ++r) {
        if (r == c) continue;
        const double f = a[r][c] / a[c][c];
        for (std::size_t j = c; j <= q + 1; ++j) a[r][j] -= f * a[c][j];
      }
    }
    if (singular) continue;
    std::vector<double> x(n, 0.0);
    bool feasible = true;
    for (std::size_t i = 0; i < q; ++i) {
      x[s[i]] = a[i][q + 1] / a[i][i];
      feasible = feasible && x[s[i]] >= -1e-12;
    }
    if (!feasible) continue;
    for (auto& v : x) v = std::max(v, 0.0);
    best = std::min(best, wls_value(t, m, cols, x));
  }
  return best;
}

/// Euclidean projection onto {x >= 0, sum(x) = budget} by sorting.
inline std::vector<double> project_simplex(std::vector<double> y, double budget) {
  std::vector<double> u = y;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cumulative += u[k];
    const double t = (cumulative - budget) / static_cast<double>(k + 1);
    if (u[k] - t > 0.0) theta = t;
  }
  for (auto& v : y) v = std::max(v - theta, 0.0);
  return y;
}

/// Projected-gradient stationarity max_k |x_k - P(x - grad f(x))_k| of the
/// wls_value problem on the scaled simplex.
inline double wls_kkt_residual(std::span<const double> t, std::span<const double> m,
                               const Matrix& cols, std::span<const double> x, double budget) {
  std::vector<double> g(cols.size(), 0.0);
  for (std::size_t c = 0; c < t.size(); ++c) {
    if (t[c] <= 0.0) continue;
    double r = t[c] - m[c];
    for (std::size_t k = 0; k < cols.size(); ++k) r -= cols[k][c] * x[k];
    for (std::size_t k = 0; k < cols.size(); ++k) g[k] -= 2.0 * cols[k][c] * r / t[c];
  }
  std::vector<double> y(x.begin(), x.end());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] -= g[k];
  const auto p = project_simplex(y, budget);
  double res = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) res = std::max(res, std::abs(x[k] - p[k]));
  return res;
}

/// Visits every point of {x >= 0, sum(x) = budget} on a grid with `steps`
/// subdivisions of the budget.
inline void for_each_grid_point(std::size_t dims, int steps, double budget,
                                const std::function<void(const std::vector<double>&)>& visit) {
  std::vector<int> counts(dims, 0);
  std::vector<double> x(dims, 0.0);
  std::function<void(std::size_t, int)> rec = [&](std::size_t d, int left) {
    if (d + 1 == dims) {
      counts[d] = left;
      for (std::size_t k = 0; k < dims; ++k) x[k] = budget * counts[k] / steps;
      visit(x);
      return;
    }
    for (int c = 0; c <= left; ++c) {
      counts[d] = c;
      rec(d + 1, left - c);
    }
  };
  if (dims == 0) return;
  rec(0, steps);
}

/// Central finite-difference gradient of f at x with absolute step h.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a|_inf, |b|_inf, floor).
inline double max_relative_error(std::span<const double> a, std::span<const double> b,
                                 double floor = 1e-8) {
  double diff = 0.0;
  double scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

/// Two-sided KS statistic of sorted samples against a CDF evaluated at each
/// distinct sample value (right-continuous step CDFs are supported).
inline double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf,
                           const std::function<double(double)>& cdf_left) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  std::size_t i = 0;
  while (i < samples.size()) {
    std::size_t j = i;
    while (j < samples.size() && samples[j] == samples[i]) ++j;
    const double before = static_cast<double>(i) / n;
    const double after = static_cast<double>(j) / n;
    d = std::max({d, std::abs(after - cdf(samples[i])), std::abs(before - cdf_left(samples[i]))});
    i = j;
  }
  return d;
}

inline std::vector<double> random_distribution(std::size_t c, std::mt19937_64& gen,
                                               double zero_probability = 0.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(c);
  double s = 0.0;
  for (auto& x : v) {
    x = u(gen) < zero_probability ? 0.0 : -std::log(1.0 - u(gen));
    s += x;
  }
  if (s == 0.0) {
    v[0] = 1.0;
    s = 1.0;
  }
  for (auto& x : v) x /= s;
  return v;
}

}  // namespace oracle
