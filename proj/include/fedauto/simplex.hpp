#pragma once

#include <span>

namespace fedauto {

/// Euclidean projection of `x` (in place) onto the scaled simplex
/// {y >= 0, sum(y) = budget} by the sort-and-threshold method of Duchi et al.
/// budget == 0 projects to the origin.
void project_onto_simplex(std::span<double> x, double budget);

/// Euclidean projection onto {y >= lower, sum(y) <= budget}. Requires
/// lower * size <= budget.
void project_onto_capped_box(std::span<double> x, double lower, double budget);

}  // namespace fedauto
