// Optimised kernels against their serial references at training-time shapes.

#include <benchmark/benchmark.h>

#include "ktl/common.hpp"
#include "ktl/kernels.hpp"

namespace {

using ktl::kernels::Tensor;

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  ktl::Rng rng(seed);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.normal());
  return v;
}

std::vector<double> random_doubles(std::size_t n, std::uint64_t seed) {
  ktl::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

struct ConvCase {
  Tensor<float> in, out, grad_out, grad_in;
  std::vector<float> w, b, gw, gb;
  ConvCase(int channels, int size) : in(channels, size, size), out(channels, size, size), grad_out(channels, size, size) {
    in.data = random_floats(in.size(), 1);
    grad_out.data = random_floats(grad_out.size(), 2);
    w = random_floats(static_cast<std::size_t>(channels * channels * 9), 3);
    b = random_floats(static_cast<std::size_t>(channels), 4);
    gw.assign(w.size(), 0.0f);
    gb.assign(b.size(), 0.0f);
  }
};

template <bool Serial>
void BM_ConvForward(benchmark::State& state) {
  ConvCase c(static_cast<int>(state.range(0)), 32);
  const int dilation = static_cast<int>(state.range(1));
  for (auto _ : state) {
    if constexpr (Serial)
      ktl::kernels::serial::conv2d_forward<float>(c.in, c.w, c.b, 3, c.out, dilation);
    else
      ktl::kernels::conv2d_forward<float>(c.in, c.w, c.b, 3, c.out, dilation);
    benchmark::DoNotOptimize(c.out.data.data());
  }
}

template <bool Serial>
void BM_ConvBackward(benchmark::State& state) {
  ConvCase c(static_cast<int>(state.range(0)), 32);
  for (auto _ : state) {
    if constexpr (Serial)
      ktl::kernels::serial::conv2d_backward<float>(c.in, c.w, 3, c.grad_out, &c.grad_in, c.gw, c.gb);
    else
      ktl::kernels::conv2d_backward<float>(c.in, c.w, 3, c.grad_out, &c.grad_in, c.gw, c.gb);
    benchmark::DoNotOptimize(c.grad_in.data.data());
  }
}

template <bool Serial>
void BM_AssignNearest(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0)), m = static_cast<std::size_t>(state.range(1)), d = 32;
  const auto x = random_doubles(n * d, 5), c = random_doubles(m * d, 6);
  std::vector<int> labels(n);
  std::vector<double> dist(n);
  for (auto _ : state) {
    if constexpr (Serial)
      ktl::kernels::serial::assign_nearest(x, c, d, labels, dist);
    else
      ktl::kernels::assign_nearest(x, c, d, labels, dist);
    benchmark::DoNotOptimize(dist.data());
  }
}

template <bool Serial>
void BM_KnnMeanDistance(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0)), d = 32;
  const auto x = random_doubles(n * d, 7);
  std::vector<double> out(n);
  for (auto _ : state) {
    if constexpr (Serial)
      ktl::kernels::serial::knn_mean_distance(x, d, 10, out);
    else
      ktl::kernels::knn_mean_distance(x, d, 10, out);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/omp")->Args({32, 1})->Args({32, 4});
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/serial")->Args({32, 1})->Args({32, 4});
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/omp")->Arg(32);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/serial")->Arg(32);
BENCHMARK(BM_AssignNearest<false>)->Name("assign_nearest/omp")->Args({6000, 100});
BENCHMARK(BM_AssignNearest<true>)->Name("assign_nearest/serial")->Args({6000, 100});
BENCHMARK(BM_KnnMeanDistance<false>)->Name("knn_mean_distance/omp")->Arg(2000);
BENCHMARK(BM_KnnMeanDistance<true>)->Name("knn_mean_distance/serial")->Arg(2000);

BENCHMARK_MAIN();
