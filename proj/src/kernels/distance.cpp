#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "ktl/kernels.hpp"

namespace ktl::kernels {
namespace {

double sq_dist_row(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double t = a[j] - b[j];
    s += t * t;
  }
  return s;
}

void check_assign(std::span<const double> features, std::span<const double> centroids,
                  std::size_t d, std::span<int> labels, std::span<double> sq_dist) {
  if (d == 0 || features.size() % d != 0 || centroids.size() % d != 0 || centroids.empty())
    throw std::invalid_argument("assign_nearest: bad dimensions");
  const std::size_t n = features.size() / d;
  if (labels.size() != n || sq_dist.size() != n)
    throw std::invalid_argument("assign_nearest: output size mismatch");
}

// Each row's neighbour list is computed independently, so the parallel and
// serial kernels share this helper and differ only in the outer loop.
double knn_row(std::span<const double> rows, std::size_t d, std::size_t k, std::size_t i,
               std::vector<double>& scratch) {
  const std::size_t n = rows.size() / d;
  scratch.clear();
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    scratch.push_back(std::sqrt(sq_dist_row(&rows[i * d], &rows[j * d], d)));
  }
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k),
                    scratch.end());
  double s = 0.0;
  for (std::size_t j = 0; j < k; ++j) s += scratch[j];
  return s / static_cast<double>(k);
}

void check_knn(std::span<const double> rows, std::size_t d, std::size_t k,
               std::span<double> out) {
  if (d == 0 || rows.size() % d != 0) throw std::invalid_argument("knn: bad dimensions");
  const std::size_t n = rows.size() / d;
  if (out.size() != n) throw std::invalid_argument("knn: output size mismatch");
  if (k == 0 || k >= n) throw std::invalid_argument("knn: k must be in [1, n-1]");
}

}  // namespace

void assign_nearest(std::span<const double> features, std::span<const double> centroids,
                    std::size_t d, std::span<int> labels, std::span<double> sq_dist) {
  check_assign(features, centroids, d, labels, sq_dist);
  const long n = static_cast<long>(features.size() / d);
  const std::size_t m = centroids.size() / d;
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    const double* f = &features[static_cast<std::size_t>(i) * d];
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t c = 0; c < m; ++c) {
      const double* cc = &centroids[c * d];
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (std::size_t j = 0; j < d; ++j) {
        const double t = f[j] - cc[j];
        s += t * t;
      }
      if (s < best) {
        best = s;
        arg = static_cast<int>(c);
      }
    }
    labels[static_cast<std::size_t>(i)] = arg;
    sq_dist[static_cast<std::size_t>(i)] = best;
  }
}

void knn_mean_distance(std::span<const double> rows, std::size_t d, std::size_t k,
                       std::span<double> out) {
  check_knn(rows, d, k, out);
  const long n = static_cast<long>(rows.size() / d);
#pragma omp parallel
  {
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (long i = 0; i < n; ++i)
      out[static_cast<std::size_t>(i)] = knn_row(rows, d, k, static_cast<std::size_t>(i), scratch);
  }
}

namespace serial {

void assign_nearest(std::span<const double> features, std::span<const double> centroids,
                    std::size_t d, std::span<int> labels, std::span<double> sq_dist) {
  check_assign(features, centroids, d, labels, sq_dist);
  const std::size_t n = features.size() / d, m = centroids.size() / d;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t c = 0; c < m; ++c) {
      const double s = sq_dist_row(&features[i * d], &centroids[c * d], d);
      if (s < best) {
        best = s;
        arg = static_cast<int>(c);
      }
    }
    labels[i] = arg;
    sq_dist[i] = best;
  }
}

void knn_mean_distance(std::span<const double> rows, std::size_t d, std::size_t k,
                       std::span<double> out) {
  check_knn(rows, d, k, out);
  std::vector<double> scratch;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = knn_row(rows, d, k, i, scratch);
}

}  // namespace serial
}  // namespace ktl::kernels
