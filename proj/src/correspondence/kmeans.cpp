#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ktl/correspondence.hpp"
#include "ktl/kernels.hpp"

namespace ktl::correspondence {
namespace {

double total(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

// k-means++: first centre uniform, the rest proportional to squared distance.
std::vector<double> seed_plus_plus(std::span<const double> x, std::size_t n, std::size_t d, int M,
                                   Rng& rng) {
  std::vector<double> c(static_cast<std::size_t>(M) * d);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.index(n);
  for (int m = 0; m < M; ++m) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(pick * d), d,
                c.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(m) * d));
    if (m + 1 == M) break;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[i * d + k] - c[static_cast<std::size_t>(m) * d + k];
        s += diff * diff;
      }
      best[i] = std::min(best[i], s);
    }
    const double sum = total(best);
    if (sum > 0.0) {
      double r = rng.uniform() * sum;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        r -= best[i];
        if (r < 0.0 && best[i] > 0.0) {
          pick = i;
          break;
        }
      }
      while (best[pick] == 0.0) --pick;
    } else {
      pick = rng.index(n);
    }
  }
  return c;
}

KMeansResult lloyd(std::span<const double> x, std::size_t n, std::size_t d, int M, Rng& rng, int max_iters) {
  KMeansResult r;
  CentroidSet& cs = r.centroids;
  cs.M = M;
  cs.d = static_cast<int>(d);
  cs.centroids = seed_plus_plus(x, n, d, M, rng);
  r.labels.assign(n, 0);
  r.sq_dist.assign(n, 0.0);
  kernels::assign_nearest(x, cs.centroids, d, r.labels, r.sq_dist);
  cs.inertia = total(r.sq_dist);
  cs.inertia_history.push_back(cs.inertia);

  std::vector<double> next(cs.centroids.size());
  std::vector<int> labels(n);
  std::vector<double> dist(n);
  std::vector<std::size_t> counts(static_cast<std::size_t>(M));
  for (int it = 0; it < max_iters; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto m = static_cast<std::size_t>(r.labels[i]);
      ++counts[m];
      for (std::size_t k = 0; k < d; ++k) next[m * d + k] += x[i * d + k];
    }
    std::vector<std::size_t> far(n);
    std::iota(far.begin(), far.end(), 0);
    std::stable_sort(far.begin(), far.end(),
                     [&](std::size_t a, std::size_t b) { return r.sq_dist[a] > r.sq_dist[b]; });
    std::size_t far_next = 0;
    for (std::size_t m = 0; m < static_cast<std::size_t>(M); ++m) {
      if (counts[m] > 0) {
        for (std::size_t k = 0; k < d; ++k) next[m * d + k] /= static_cast<double>(counts[m]);
      } else {
        const std::size_t i = far[far_next++];
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(i * d), d,
                    next.begin() + static_cast<std::ptrdiff_t>(m * d));
      }
    }
    kernels::assign_nearest(x, next, d, labels, dist);
    const double inertia = total(dist);
    // Reject a step that would raise inertia (possible only through rounding).
    if (inertia > cs.inertia) break;
    const bool unchanged = labels == r.labels;
    cs.centroids = next;
    r.labels = labels;
    r.sq_dist = dist;
    cs.inertia = inertia;
    cs.inertia_history.push_back(inertia);
    cs.iteration_count = it + 1;
    if (unchanged) break;
  }
  return r;
}

}  // namespace

KMeansResult kmeans(std::span<const double> x, std::size_t d, int M, std::uint64_t seed,
                    int max_iters, int restarts) {
  if (d == 0 || x.size() % d != 0) throw UserError("kmeans: feature matrix shape is inconsistent");
  const std::size_t n = x.size() / d;
  if (M < 1) throw UserError("kmeans: M must be >= 1");
  if (restarts < 1) throw UserError("kmeans: restarts must be >= 1");
  if (n < static_cast<std::size_t>(M))
    throw UserError("kmeans: " + std::to_string(n) + " features cannot form " + std::to_string(M) +
                    " clusters");
  for (double v : x)
    if (!std::isfinite(v)) throw UserError("kmeans: non-finite feature value");

  Rng rng(seed);
  KMeansResult best = lloyd(x, n, d, M, rng, max_iters);
  for (int run = 1; run < restarts; ++run) {
    KMeansResult r = lloyd(x, n, d, M, rng, max_iters);
    if (r.centroids.inertia < best.centroids.inertia) best = std::move(r);
  }
  return best;
}

std::vector<char> dedupe_per_image(std::span<const int> group, std::span<const int> labels,
                                   std::span<const double> sq_dist) {
  const std::size_t n = group.size();
  if (labels.size() != n || sq_dist.size() != n)
    throw InternalError("dedupe_per_image: input sizes differ");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (group[a] != group[b]) return group[a] < group[b];
    if (labels[a] != labels[b]) return labels[a] < labels[b];
    if (sq_dist[a] != sq_dist[b]) return sq_dist[a] < sq_dist[b];
    return a < b;
  });
  std::vector<char> keep(n, 0);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    if (k == 0 || group[order[k - 1]] != group[i] || labels[order[k - 1]] != labels[i]) keep[i] = 1;
  }
  return keep;
}

}  // namespace ktl::correspondence
