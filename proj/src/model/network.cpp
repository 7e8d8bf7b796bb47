#include <algorithm>
#include <cmath>

#include "ktl/model.hpp"

namespace ktl::model {
namespace {

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
void silu(const Tensor<T>& a, Tensor<T>& h) {
  h = Tensor<T>(a.c, a.h, a.w);
  for (std::size_t i = 0; i < a.size(); ++i) h.data[i] = a.data[i] * sigmoid(a.data[i]);
}

// grad (w.r.t. h) -> grad w.r.t. a, in place.
template <typename T>
void silu_backward(const Tensor<T>& a, Tensor<T>& grad) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T s = sigmoid(a.data[i]);
    grad.data[i] *= s * (T(1) + a.data[i] * (T(1) - s));
  }
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& in) {
  Tensor<T> out(in.c, in.h / 2, in.w / 2);
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        out.at(c, y, x) = T(0.25) * (in.at(c, 2 * y, 2 * x) + in.at(c, 2 * y, 2 * x + 1) +
                                     in.at(c, 2 * y + 1, 2 * x) + in.at(c, 2 * y + 1, 2 * x + 1));
  return out;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& grad_out, int h, int w) {
  Tensor<T> g(grad_out.c, h, w);
  for (int c = 0; c < grad_out.c; ++c)
    for (int y = 0; y < grad_out.h; ++y)
      for (int x = 0; x < grad_out.w; ++x) {
        const T v = T(0.25) * grad_out.at(c, y, x);
        g.at(c, 2 * y, 2 * x) = v;
        g.at(c, 2 * y, 2 * x + 1) = v;
        g.at(c, 2 * y + 1, 2 * x) = v;
        g.at(c, 2 * y + 1, 2 * x + 1) = v;
      }
  return g;
}

constexpr double kNormEps2 = 1e-12;
// Dilations of the last two backbone layers; the receptive field spans 32 px.
constexpr int kDilation3 = 2;
constexpr int kDilation4 = 4;

// Heads read [h2; h4]: local detail next to dilated context.
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.c + b.c, a.h, a.w);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

template <typename T>
void split(const Tensor<T>& g, Tensor<T>& a, Tensor<T>& b, int ca) {
  a = Tensor<T>(ca, g.h, g.w);
  b = Tensor<T>(g.c - ca, g.h, g.w);
  std::copy(g.data.begin(), g.data.begin() + static_cast<std::ptrdiff_t>(a.size()), a.data.begin());
  std::copy(g.data.begin() + static_cast<std::ptrdiff_t>(a.size()), g.data.end(), b.data.begin());
}

template <typename T>
void fill_normal(std::vector<T>& v, std::size_t n, double stddev, Rng& rng) {
  v.resize(n);
  for (T& x : v) x = static_cast<T>(stddev * rng.normal());
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& g) {
  if (acc.size() == 0) {
    acc = g;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += g.data[i];
}

template <typename T>
void check_dims(const ModelDims& d) {
  if (d.input_h < 4 || d.input_w < 4 || d.input_h % 2 != 0 || d.input_w % 2 != 0)
    throw UserError("model: input dimensions must be even and >= 4");
  if (d.hidden < 1 || d.descriptor_dim < 1 || d.landmarks < 0)
    throw UserError("model: invalid layer widths");
}

}  // namespace

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  Network<U> out;
  out.dims = dims;
  std::vector<const std::vector<T>*> src;
  params.for_each([&](ParamGroup, const std::vector<T>& v) { src.push_back(&v); });
  std::size_t i = 0;
  out.params.for_each([&](ParamGroup, std::vector<U>& v) {
    const auto& s = *src[i++];
    v.assign(s.begin(), s.end());
  });
  return out;
}

template <typename T>
Network<T> init_network(const ModelDims& dims, std::uint64_t seed) {
  check_dims<T>(dims);
  Network<T> net;
  net.dims = dims;
  Rng rng(seed);
  const std::size_t C = static_cast<std::size_t>(dims.hidden);
  const std::size_t D = static_cast<std::size_t>(dims.descriptor_dim);
  auto& p = net.params;
  fill_normal(p.conv1_w, C * 9, std::sqrt(2.0 / 9.0), rng);
  p.conv1_b.assign(C, T(0));
  for (auto* pr : {&p.conv2_w, &p.conv3_w, &p.conv4_w}) fill_normal(*pr, C * C * 9, std::sqrt(2.0 / (9.0 * C)), rng);
  p.conv2_b.assign(C, T(0));
  p.conv3_b.assign(C, T(0));
  p.conv4_b.assign(C, T(0));
  const std::size_t H = 2 * C;
  fill_normal(p.detector_w, H, std::sqrt(1.0 / H), rng);
  p.detector_b.assign(1, T(0));
  fill_normal(p.descriptor_w, D * H, std::sqrt(1.0 / H), rng);
  p.descriptor_b.assign(D, T(0));
  if (dims.landmarks > 0) reset_landmark_head(net, dims.landmarks, mix_seed(seed, 99));
  return net;
}

template <typename T>
void reset_landmark_head(Network<T>& net, int landmarks, std::uint64_t seed) {
  if (landmarks < 1) throw UserError("model: landmark head needs K >= 1");
  Rng rng(seed);
  const std::size_t H = 2 * static_cast<std::size_t>(net.dims.hidden);
  net.dims.landmarks = landmarks;
  fill_normal(net.params.landmark_w, static_cast<std::size_t>(landmarks) * H, std::sqrt(1.0 / H),
              rng);
  net.params.landmark_b.assign(static_cast<std::size_t>(landmarks), T(0));
}

template <typename T>
Tensor<T> to_input(const synth::Raster& r) {
  Tensor<T> t(1, r.h, r.w);
  for (std::size_t i = 0; i < r.values.size(); ++i) t.data[i] = static_cast<T>(r.values[i]);
  return t;
}

template <typename T>
ForwardCache<T> forward(const Network<T>& net, const Tensor<T>& input) {
  const ModelDims& d = net.dims;
  if (input.c != 1 || input.h != d.input_h || input.w != d.input_w)
    throw UserError("forward: raster is " + std::to_string(input.h) + "x" +
                    std::to_string(input.w) + ", model expects " + std::to_string(d.input_h) +
                    "x" + std::to_string(d.input_w));
  const auto& p = net.params;
  ForwardCache<T> c;
  c.input = input;
  kernels::conv2d_forward<T>(input, p.conv1_w, p.conv1_b, 3, c.a1);
  silu(c.a1, c.h1);
  c.p1 = avg_pool2(c.h1);
  kernels::conv2d_forward<T>(c.p1, p.conv2_w, p.conv2_b, 3, c.a2);
  silu(c.a2, c.h2);
  kernels::conv2d_forward<T>(c.h2, p.conv3_w, p.conv3_b, 3, c.a3, kDilation3);
  silu(c.a3, c.h3);
  kernels::conv2d_forward<T>(c.h3, p.conv4_w, p.conv4_b, 3, c.a4, kDilation4);
  silu(c.a4, c.h4);
  c.trunk = concat(c.h2, c.h4);
  kernels::conv2d_forward<T>(c.trunk, p.detector_w, p.detector_b, 1, c.detector);
  kernels::conv2d_forward<T>(c.trunk, p.descriptor_w, p.descriptor_b, 1, c.raw_features);

  c.features = Tensor<T>(c.raw_features.c, c.raw_features.h, c.raw_features.w);
  const int D = c.features.c, HW = c.features.h * c.features.w;
  for (int i = 0; i < HW; ++i) {
    double s = 0.0;
    for (int k = 0; k < D; ++k) {
      const double v = c.raw_features.data[static_cast<std::size_t>(k) * HW + i];
      s += v * v;
    }
    const double inv = 1.0 / std::sqrt(s + kNormEps2);
    for (int k = 0; k < D; ++k) {
      const std::size_t idx = static_cast<std::size_t>(k) * HW + i;
      c.features.data[idx] = static_cast<T>(c.raw_features.data[idx] * inv);
    }
  }
  if (d.landmarks > 0)
    kernels::conv2d_forward<T>(c.trunk, p.landmark_w, p.landmark_b, 1, c.landmarks);
  return c;
}

template <typename T>
void backward(const Network<T>& net, const ForwardCache<T>& c, const OutputGrads<T>& out,
              ParamSet<T>& g) {
  const auto& p = net.params;
  Tensor<T> g_trunk, tmp;

  if (out.detector.size() > 0) {
    kernels::conv2d_backward<T>(c.trunk, p.detector_w, 1, out.detector, &tmp, g.detector_w,
                                g.detector_b);
    add_into(g_trunk, tmp);
  }
  if (out.features.size() > 0) {
    // Through the per-cell normalisation n = r / |r|.
    Tensor<T> g_raw(c.raw_features.c, c.raw_features.h, c.raw_features.w);
    const int D = g_raw.c, HW = g_raw.h * g_raw.w;
    for (int i = 0; i < HW; ++i) {
      double s = 0.0, dot = 0.0;
      for (int k = 0; k < D; ++k) {
        const std::size_t idx = static_cast<std::size_t>(k) * HW + i;
        const double r = c.raw_features.data[idx];
        s += r * r;
        dot += static_cast<double>(c.features.data[idx]) * out.features.data[idx];
      }
      const double inv = 1.0 / std::sqrt(s + kNormEps2);
      for (int k = 0; k < D; ++k) {
        const std::size_t idx = static_cast<std::size_t>(k) * HW + i;
        g_raw.data[idx] = static_cast<T>(
            (out.features.data[idx] - static_cast<double>(c.features.data[idx]) * dot) * inv);
      }
    }
    kernels::conv2d_backward<T>(c.trunk, p.descriptor_w, 1, g_raw, &tmp, g.descriptor_w,
                                g.descriptor_b);
    add_into(g_trunk, tmp);
  }
  if (out.landmarks.size() > 0) {
    if (net.dims.landmarks == 0) throw InternalError("backward: no landmark head");
    kernels::conv2d_backward<T>(c.trunk, p.landmark_w, 1, out.landmarks, &tmp, g.landmark_w,
                                g.landmark_b);
    add_into(g_trunk, tmp);
  }
  if (g_trunk.size() == 0) return;

  Tensor<T> g_h2, g_h4;
  split(g_trunk, g_h2, g_h4, c.h2.c);
  silu_backward(c.a4, g_h4);
  Tensor<T> g_h3;
  kernels::conv2d_backward<T>(c.h3, p.conv4_w, 3, g_h4, &g_h3, g.conv4_w, g.conv4_b, kDilation4);
  silu_backward(c.a3, g_h3);
  kernels::conv2d_backward<T>(c.h2, p.conv3_w, 3, g_h3, &tmp, g.conv3_w, g.conv3_b, kDilation3);
  add_into(g_h2, tmp);
  silu_backward(c.a2, g_h2);
  Tensor<T> g_p1;
  kernels::conv2d_backward<T>(c.p1, p.conv2_w, 3, g_h2, &g_p1, g.conv2_w, g.conv2_b);
  Tensor<T> g_h1 = avg_pool2_backward(g_p1, c.h1.h, c.h1.w);
  silu_backward(c.a1, g_h1);
  kernels::conv2d_backward<T>(c.input, p.conv1_w, 3, g_h1, nullptr, g.conv1_w, g.conv1_b);
}

template <typename T>
GradientResult<T> gradient(const Network<T>& net, std::span<const Tensor<T>> inputs,
                           const LossClosure<T>& closure) {
  std::vector<ForwardCache<T>> caches;
  caches.reserve(inputs.size());
  for (const Tensor<T>& in : inputs) caches.push_back(forward(net, in));
  std::vector<OutputGrads<T>> outs(inputs.size());
  GradientResult<T> r;
  r.loss = closure(caches, outs);
  if (!std::isfinite(r.loss)) throw InternalError("gradient: non-finite loss");
  r.grads = net.params.template zeros_like<T>();
  for (std::size_t i = 0; i < caches.size(); ++i) backward(net, caches[i], outs[i], r.grads);
  return r;
}

#define KTL_INSTANTIATE_NET(T)                                                              \
  template Network<T> init_network<T>(const ModelDims&, std::uint64_t);                     \
  template void reset_landmark_head<T>(Network<T>&, int, std::uint64_t);                    \
  template Tensor<T> to_input<T>(const synth::Raster&);                                     \
  template ForwardCache<T> forward<T>(const Network<T>&, const Tensor<T>&);                 \
  template void backward<T>(const Network<T>&, const ForwardCache<T>&, const OutputGrads<T>&, \
                            ParamSet<T>&);                                                  \
  template GradientResult<T> gradient<T>(const Network<T>&, std::span<const Tensor<T>>,     \
                                         const LossClosure<T>&);

KTL_INSTANTIATE_NET(float)
KTL_INSTANTIATE_NET(double)

template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;
template Network<double> Network<double>::cast<double>() const;

}  // namespace ktl::model
