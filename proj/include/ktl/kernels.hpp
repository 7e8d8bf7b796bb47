#pragma once

// Data-parallel inner loops. Every kernel has an optimised version (namespace
// ktl::kernels) and a plain serial reference (ktl::kernels::serial) that the
// tests compare against and the benchmarks race.

#include <cstddef>
#include <span>
#include <vector>

namespace ktl::kernels {

/// Dense channel-major activation volume: data[(c * h + y) * w + x].
template <typename T>
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int channels, int height, int width, T fill = T(0))
      : c(channels), h(height), w(width),
        data(static_cast<std::size_t>(channels) * height * width, fill) {}

  T& at(int ch, int y, int x) { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  const T& at(int ch, int y, int x) const {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  std::span<T> plane(int ch) {
    return {data.data() + static_cast<std::size_t>(ch) * h * w, static_cast<std::size_t>(h) * w};
  }
  std::span<const T> plane(int ch) const {
    return {data.data() + static_cast<std::size_t>(ch) * h * w, static_cast<std::size_t>(h) * w};
  }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

// Convolution: stride 1, odd square kernel `k` with the given dilation, zero
// padding dilation * (k / 2) ("same").
// Weights are laid out [out_ch][in_ch][k][k]; bias is [out_ch].

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    int k, Tensor<T>& out, int dilation = 1);

/// Accumulates into grad_weight / grad_bias. grad_in (if non-null) is overwritten.
template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, int k,
                     const Tensor<T>& grad_out, Tensor<T>* grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias, int dilation = 1);

/// Nearest-centroid assignment. features is n x d row-major, centroids m x d.
/// Ties go to the lower centroid index.
void assign_nearest(std::span<const double> features, std::span<const double> centroids,
                    std::size_t d, std::span<int> labels, std::span<double> sq_dist);

/// Mean Euclidean distance from each row to its k nearest other rows.
void knn_mean_distance(std::span<const double> rows, std::size_t d, std::size_t k,
                       std::span<double> out);

namespace serial {

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    int k, Tensor<T>& out, int dilation = 1);

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, int k,
                     const Tensor<T>& grad_out, Tensor<T>* grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias, int dilation = 1);

void assign_nearest(std::span<const double> features, std::span<const double> centroids,
                    std::size_t d, std::span<int> labels, std::span<double> sq_dist);

void knn_mean_distance(std::span<const double> rows, std::size_t d, std::size_t k,
                       std::span<double> out);

}  // namespace serial
}  // namespace ktl::kernels
