#pragma once

#include <span>
#include <vector>

namespace ktl::eval {

/// Minimum-cost perfect assignment on an n x n row-major cost matrix;
/// result[row] = column. Among optimal assignments the lexicographically
/// smallest is returned. Throws UserError on non-finite or non-square input.
std::vector<int> hungarian(std::span<const double> cost, int n);

double assignment_cost(std::span<const double> cost, int n, std::span<const int> assignment);

}  // namespace ktl::eval
