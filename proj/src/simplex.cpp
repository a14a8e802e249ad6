#include "fedauto/simplex.hpp"

#include <algorithm>
#include <functional>
#include <vector>

#include "fedauto/errors.hpp"

namespace fedauto {

void project_onto_simplex(std::span<double> x, double budget) {
  if (x.empty()) throw ParameterError("projection of an empty vector");
  if (budget < 0.0) throw ParameterError("simplex budget must be non-negative");
  if (budget == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    return;
  }
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumulative += sorted[k];
    const double t = (cumulative - budget) / static_cast<double>(k + 1);
    if (sorted[k] - t > 0.0) theta = t;
  }
  for (auto& v : x) v = std::max(v - theta, 0.0);
}

void project_onto_capped_box(std::span<double> x, double lower, double budget) {
  if (lower * static_cast<double>(x.size()) > budget) {
    throw ParameterError("capped box is empty: lower bound exceeds budget");
  }
  double sum = 0.0;
  for (double v : x) sum += std::max(v, lower);
  if (sum <= budget) {
    for (auto& v : x) v = std::max(v, lower);
    return;
  }
  // Budget binds: shift to the simplex of the excess over the lower bound.
  for (auto& v : x) v -= lower;
  project_onto_simplex(x, budget - lower * static_cast<double>(x.size()));
  for (auto& v : x) v += lower;
}

}  // namespace fedauto
