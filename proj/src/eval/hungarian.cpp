#include "ktl/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ktl/common.hpp"

namespace ktl::eval {
namespace {

// Shortest augmenting path with row/column potentials (1-based internally).
void solve(std::span<const double> a, int n, std::vector<double>& u, std::vector<double>& v,
           std::vector<int>& row_of_col) {
  const double inf = std::numeric_limits<double>::infinity();
  u.assign(n + 1, 0.0);
  v.assign(n + 1, 0.0);
  row_of_col.assign(n + 1, 0);
  std::vector<int> way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    row_of_col[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = row_of_col[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of_col[j0] != 0);
    do {
      const int j1 = way[j0];
      row_of_col[j0] = row_of_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }
}

struct TightGraph {
  int n;
  std::vector<char> tight;  // n x n
  bool edge(int i, int j) const { return tight[static_cast<std::size_t>(i) * n + j] != 0; }
};

// Kuhn-style alternating path from row r to a free column; rows below
// first_free_row keep their columns.
bool augment(const TightGraph& g, int r, int first_free_row, std::vector<int>& col_of_row,
             std::vector<int>& row_of_col, std::vector<char>& seen) {
  for (int j = 0; j < g.n; ++j) {
    if (!g.edge(r, j) || seen[j]) continue;
    seen[j] = 1;
    const int owner = row_of_col[j];
    if (owner == -1 ||
        (owner >= first_free_row && augment(g, owner, first_free_row, col_of_row, row_of_col, seen))) {
      col_of_row[r] = j;
      row_of_col[j] = r;
      return true;
    }
  }
  return false;
}

}  // namespace

std::vector<int> hungarian(std::span<const double> cost, int n) {
  if (n < 0 || cost.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n))
    throw UserError("hungarian: cost matrix must be square");
  double scale = 0.0;
  for (double c : cost) {
    if (!std::isfinite(c)) throw UserError("hungarian: non-finite cost entry");
    scale = std::max(scale, std::abs(c));
  }
  if (n == 0) return {};

  std::vector<double> u, v;
  std::vector<int> row_of_col1;
  solve(cost, n, u, v, row_of_col1);

  // Every optimal assignment lives on the tight edges of an optimal dual.
  const double eps = 1e-9 * (1.0 + scale) * n;
  TightGraph g{n, std::vector<char>(static_cast<std::size_t>(n) * n, 0)};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      g.tight[static_cast<std::size_t>(i) * n + j] =
          std::abs(cost[static_cast<std::size_t>(i) * n + j] - u[i + 1] - v[j + 1]) <= eps;

  std::vector<int> col_of_row(n), row_of_col(n);
  for (int j = 1; j <= n; ++j) {
    col_of_row[row_of_col1[j] - 1] = j - 1;
    row_of_col[j - 1] = row_of_col1[j] - 1;
  }

  // Greedy lexicographic minimisation: fix rows in order to their smallest
  // column that still admits a perfect tight matching on the rest.
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < col_of_row[i]; ++j) {
      if (!g.edge(i, j)) continue;
      const int other = row_of_col[j];
      if (other < i) continue;
      // Try to give `other` the column currently held by i.
      std::vector<int> c2 = col_of_row, r2 = row_of_col;
      const int freed = c2[i];
      c2[i] = j;
      r2[j] = i;
      r2[freed] = -1;
      c2[other] = -1;
      std::vector<char> seen(n, 0);
      if (augment(g, other, i + 1, c2, r2, seen)) {
        col_of_row = std::move(c2);
        row_of_col = std::move(r2);
        break;
      }
    }
  }
  return col_of_row;
}

double assignment_cost(std::span<const double> cost, int n, std::span<const int> assignment) {
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    s += cost[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])];
  return s;
}

}  // namespace ktl::eval
