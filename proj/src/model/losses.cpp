#include <algorithm>
#include <cmath>
#include <numeric>

#include "ktl/model.hpp"

namespace ktl::model {
namespace {

constexpr double kNormEps2 = 1e-12;

struct BilinearTap {
  int x0, y0;
  double fx, fy;
};

template <typename T>
BilinearTap locate(const Tensor<T>& map, Point2 p) {
  if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= map.w - 1 && p.y <= map.h - 1))
    throw UserError("sample_descriptor: position (" + std::to_string(p.x) + ", " +
                    std::to_string(p.y) + ") outside the feature grid");
  BilinearTap t;
  t.x0 = std::min(static_cast<int>(std::floor(p.x)), std::max(map.w - 2, 0));
  t.y0 = std::min(static_cast<int>(std::floor(p.y)), std::max(map.h - 2, 0));
  t.fx = p.x - t.x0;
  t.fy = p.y - t.y0;
  return t;
}

template <typename T>
std::vector<double> interpolate(const Tensor<T>& map, const BilinearTap& t) {
  const int x1 = std::min(t.x0 + 1, map.w - 1), y1 = std::min(t.y0 + 1, map.h - 1);
  const double w00 = (1 - t.fx) * (1 - t.fy), w10 = t.fx * (1 - t.fy);
  const double w01 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
  std::vector<double> v(static_cast<std::size_t>(map.c));
  for (int k = 0; k < map.c; ++k)
    v[static_cast<std::size_t>(k)] = w00 * map.at(k, t.y0, t.x0) + w10 * map.at(k, t.y0, x1) +
                                     w01 * map.at(k, y1, t.x0) + w11 * map.at(k, y1, x1);
  return v;
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) throw UserError(std::string(what) + ": dimension mismatch");
}

}  // namespace

template <typename T>
Heatmap<T> render_target(std::span<const Point2> points, double sigma, int grid_h, int grid_w) {
  if (!(sigma > 0.0)) throw UserError("render_target: sigma must be positive");
  Heatmap<T> map(1, grid_h, grid_w);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < grid_h; ++y)
    for (int x = 0; x < grid_w; ++x) {
      double best = 0.0;
      for (const Point2& p : points) {
        const double dx = x - p.x, dy = y - p.y;
        best = std::max(best, std::exp(-(dx * dx + dy * dy) * inv));
      }
      map.at(0, y, x) = static_cast<T>(best);
    }
  return map;
}

template <typename T>
double detector_loss(const Heatmap<T>& predicted, const Heatmap<T>& target, Heatmap<T>* grad) {
  require_same(predicted, target, "detector_loss");
  const std::size_t n = predicted.size();
  if (n == 0) throw UserError("detector_loss: empty heatmap");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = static_cast<double>(predicted.data[i]) - target.data[i];
    sum += r * r;
  }
  if (grad) {
    *grad = Heatmap<T>(predicted.c, predicted.h, predicted.w);
    for (std::size_t i = 0; i < n; ++i)
      grad->data[i] = static_cast<T>(2.0 * (static_cast<double>(predicted.data[i]) - target.data[i]) /
                                     static_cast<double>(n));
  }
  return sum / static_cast<double>(n);
}

template <typename T>
std::vector<double> sample_descriptor(const Tensor<T>& map, Point2 position) {
  std::vector<double> v = interpolate(map, locate(map, position));
  double s = 0.0;
  for (double x : v) s += x * x;
  const double inv = 1.0 / std::sqrt(s + kNormEps2);
  for (double& x : v) x *= inv;
  return v;
}

template <typename T>
void sample_descriptor_backward(const Tensor<T>& map, Point2 position,
                                std::span<const double> grad_descriptor, Tensor<T>& grad_map) {
  if (grad_descriptor.size() != static_cast<std::size_t>(map.c))
    throw InternalError("sample_descriptor_backward: gradient size mismatch");
  if (!grad_map.same_shape(map)) grad_map = Tensor<T>(map.c, map.h, map.w);
  const BilinearTap t = locate(map, position);
  const std::vector<double> v = interpolate(map, t);
  double s = 0.0;
  for (double x : v) s += x * x;
  const double norm = std::sqrt(s + kNormEps2);
  double dot = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) dot += v[k] / norm * grad_descriptor[k];

  const int x1 = std::min(t.x0 + 1, map.w - 1), y1 = std::min(t.y0 + 1, map.h - 1);
  const double w00 = (1 - t.fx) * (1 - t.fy), w10 = t.fx * (1 - t.fy);
  const double w01 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
  for (int k = 0; k < map.c; ++k) {
    const double g = (grad_descriptor[static_cast<std::size_t>(k)] -
                      v[static_cast<std::size_t>(k)] / norm * dot) / norm;
    grad_map.at(k, t.y0, t.x0) += static_cast<T>(w00 * g);
    grad_map.at(k, t.y0, x1) += static_cast<T>(w10 * g);
    grad_map.at(k, y1, t.x0) += static_cast<T>(w01 * g);
    grad_map.at(k, y1, x1) += static_cast<T>(w11 * g);
  }
}

template <typename T>
double contrastive_loss(const PairBatch& batch, std::span<const Tensor<T>* const> maps,
                        double margin, std::span<Tensor<T>> grads) {
  if (!(margin > 0.0)) throw UserError("contrastive_loss: margin must be positive");
  if (batch.empty()) throw UserError("contrastive_loss: empty pair batch");
  if (!grads.empty() && grads.size() != maps.size())
    throw InternalError("contrastive_loss: one gradient map per feature map required");
  const double n = static_cast<double>(batch.positives.size() + batch.negatives.size());

  auto map_of = [&](const LocationRef& r) -> const Tensor<T>& {
    if (r.image < 0 || static_cast<std::size_t>(r.image) >= maps.size())
      throw UserError("contrastive_loss: image reference out of range");
    return *maps[static_cast<std::size_t>(r.image)];
  };
  // sign = +1 pulls the pair together, -1 pushes apart; scale is d loss / d (squared distance).
  auto term = [&](const LocationRef& a, const LocationRef& b, bool positive) {
    const std::vector<double> fa = sample_descriptor(map_of(a), a.position);
    const std::vector<double> fb = sample_descriptor(map_of(b), b.position);
    double d2 = 0.0;
    for (std::size_t k = 0; k < fa.size(); ++k) d2 += (fa[k] - fb[k]) * (fa[k] - fb[k]);
    double value, slope;
    if (positive) {
      value = d2;
      slope = 1.0;
    } else if (d2 < margin) {
      value = margin - d2;
      slope = -1.0;
    } else {
      return 0.0;
    }
    if (!grads.empty()) {
      std::vector<double> ga(fa.size()), gb(fa.size());
      for (std::size_t k = 0; k < fa.size(); ++k) {
        ga[k] = slope * 2.0 * (fa[k] - fb[k]) / n;
        gb[k] = -ga[k];
      }
      sample_descriptor_backward(map_of(a), a.position, ga, grads[static_cast<std::size_t>(a.image)]);
      sample_descriptor_backward(map_of(b), b.position, gb, grads[static_cast<std::size_t>(b.image)]);
    }
    return value;
  };

  double sum = 0.0;
  for (const auto& [a, b] : batch.positives) sum += term(a, b, true);
  for (const NegativePair& p : batch.negatives) sum += term(p.a, p.b, false);
  return sum / n;
}

template <typename T>
double stage2_loss(const Heatmap<T>& predicted, const Heatmap<T>& target,
                   std::span<const int> detected, Heatmap<T>* grad) {
  require_same(predicted, target, "stage2_loss");
  if (detected.empty()) throw UserError("stage2_loss: empty detected set");
  std::vector<int> seen(static_cast<std::size_t>(predicted.c), 0);
  for (int k : detected) {
    if (k < 0 || k >= predicted.c) throw UserError("stage2_loss: channel index out of range");
    if (seen[static_cast<std::size_t>(k)]++) throw UserError("stage2_loss: duplicate channel index");
  }
  const std::size_t cells = static_cast<std::size_t>(predicted.h) * predicted.w;
  const double scale = 1.0 / (static_cast<double>(cells) * static_cast<double>(detected.size()));
  if (grad) *grad = Heatmap<T>(predicted.c, predicted.h, predicted.w);
  double sum = 0.0;
  for (int k : detected) {
    const auto p = predicted.plane(k);
    const auto t = target.plane(k);
    for (std::size_t i = 0; i < cells; ++i) {
      const double r = static_cast<double>(p[i]) - t[i];
      sum += r * r;
      if (grad) grad->plane(k)[i] = static_cast<T>(2.0 * r * scale);
    }
  }
  return sum * scale;
}

#define KTL_INSTANTIATE_LOSSES(T)                                                                \
  template Heatmap<T> render_target<T>(std::span<const Point2>, double, int, int);               \
  template double detector_loss<T>(const Heatmap<T>&, const Heatmap<T>&, Heatmap<T>*);           \
  template std::vector<double> sample_descriptor<T>(const Tensor<T>&, Point2);                   \
  template void sample_descriptor_backward<T>(const Tensor<T>&, Point2, std::span<const double>, \
                                              Tensor<T>&);                                       \
  template double contrastive_loss<T>(const PairBatch&, std::span<const Tensor<T>* const>,       \
                                      double, std::span<Tensor<T>>);                             \
  template double stage2_loss<T>(const Heatmap<T>&, const Heatmap<T>&, std::span<const int>,     \
                                 Heatmap<T>*);

KTL_INSTANTIATE_LOSSES(float)
KTL_INSTANTIATE_LOSSES(double)

}  // namespace ktl::model
