#include <algorithm>
#include <stdexcept>

#include <Eigen/Dense>

#include "ktl/kernels.hpp"

namespace ktl::kernels {
namespace {

template <typename T>
void check_shapes(const Tensor<T>& in, std::size_t weight_size, int k, int out_c, int dilation) {
  if (k <= 0 || k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
  if (dilation < 1) throw std::invalid_argument("conv2d: dilation must be >= 1");
  if (weight_size != static_cast<std::size_t>(out_c) * in.c * k * k)
    throw std::invalid_argument("conv2d: weight size mismatch");
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Patch matrix [(ci, ky, kx)][y * W + x], zero outside the image.
template <typename T>
void im2col(const Tensor<T>& in, int k, int dil, RowMat<T>& col) {
  const int H = in.h, W = in.w, C = in.c, pad = k / 2;
  col.setZero(static_cast<Eigen::Index>(C) * k * k, static_cast<Eigen::Index>(H) * W);
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < C; ++ci) {
    const T* src = in.data.data() + static_cast<std::size_t>(ci) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      const int dy = (ky - pad) * dil;
      const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
      for (int kx = 0; kx < k; ++kx) {
        const int dx = (kx - pad) * dil;
        const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
        T* row = col.row((static_cast<Eigen::Index>(ci) * k + ky) * k + kx).data();
        for (int y = y0; y < y1; ++y)
          std::copy(src + (y + dy) * W + x0 + dx, src + (y + dy) * W + x1 + dx, row + y * W + x0);
      }
    }
  }
}

template <typename T>
void col2im(const RowMat<T>& col, int k, int dil, Tensor<T>& out) {
  const int H = out.h, W = out.w, C = out.c, pad = k / 2;
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < C; ++ci) {
    T* dst = out.data.data() + static_cast<std::size_t>(ci) * H * W;
    std::fill(dst, dst + H * W, T(0));
    for (int ky = 0; ky < k; ++ky) {
      const int dy = (ky - pad) * dil;
      const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
      for (int kx = 0; kx < k; ++kx) {
        const int dx = (kx - pad) * dil;
        const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
        const T* row = col.row((static_cast<Eigen::Index>(ci) * k + ky) * k + kx).data();
        for (int y = y0; y < y1; ++y) {
          T* d = dst + (y + dy) * W + dx;
          const T* s = row + y * W;
#pragma omp simd
          for (int x = x0; x < x1; ++x) d[x] += s[x];
        }
      }
    }
  }
}

// Owned copy of a row-major block. Eigen picks vector paths by address
// alignment, so mapping caller memory directly would make the rounding
// depend on where the allocator put it.
template <typename T>
RowMat<T> owned(const T* data, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const RowMat<T>>(data, rows, cols);
}

}  // namespace

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    int k, Tensor<T>& out, int dilation) {
  const int out_c = static_cast<int>(bias.size());
  check_shapes(in, weight.size(), k, out_c, dilation);
  const Eigen::Index HW = static_cast<Eigen::Index>(in.h) * in.w, CK = static_cast<Eigen::Index>(in.c) * k * k;
  if (!(out.c == out_c && out.h == in.h && out.w == in.w)) out = Tensor<T>(out_c, in.h, in.w);
  const RowMat<T> wm = owned(weight.data(), out_c, CK);
  RowMat<T> om;
  if (k == 1) {
    om.noalias() = wm * owned(in.data.data(), in.c, HW);
  } else {
    RowMat<T> col;
    im2col(in, k, dilation, col);
    om.noalias() = wm * col;
  }
  for (int co = 0; co < out_c; ++co) om.row(co).array() += bias[static_cast<std::size_t>(co)];
  std::copy(om.data(), om.data() + om.size(), out.data.begin());
}

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, int k,
                     const Tensor<T>& grad_out, Tensor<T>* grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias, int dilation) {
  const int out_c = grad_out.c;
  check_shapes(in, weight.size(), k, out_c, dilation);
  const Eigen::Index HW = static_cast<Eigen::Index>(in.h) * in.w, CK = static_cast<Eigen::Index>(in.c) * k * k;
  const RowMat<T> gm = owned(grad_out.data.data(), out_c, HW);
  for (int co = 0; co < out_c; ++co) {
    const T* g = grad_out.data.data() + static_cast<std::size_t>(co) * HW;
    T sum = 0;
    for (Eigen::Index i = 0; i < HW; ++i) sum += g[i];
    grad_bias[static_cast<std::size_t>(co)] += sum;
  }

  RowMat<T> col;
  if (k == 1)
    col = owned(in.data.data(), in.c, HW);
  else
    im2col(in, k, dilation, col);
  RowMat<T> gw;
  gw.noalias() = gm * col.transpose();
  for (Eigen::Index i = 0; i < gw.size(); ++i) grad_weight[static_cast<std::size_t>(i)] += gw.data()[i];
  if (grad_in == nullptr) return;
  if (!grad_in->same_shape(in)) *grad_in = Tensor<T>(in.c, in.h, in.w);
  const RowMat<T> wm = owned(weight.data(), out_c, CK);
  RowMat<T> dcol;
  dcol.noalias() = wm.transpose() * gm;
  if (k == 1)
    std::copy(dcol.data(), dcol.data() + dcol.size(), grad_in->data.begin());
  else
    col2im(dcol, k, dilation, *grad_in);
}

namespace serial {

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    int k, Tensor<T>& out, int dilation) {
  const int out_c = static_cast<int>(bias.size());
  check_shapes(in, weight.size(), k, out_c, dilation);
  const int pad = k / 2;
  out = Tensor<T>(out_c, in.h, in.w);
  for (int co = 0; co < out_c; ++co)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        T s = bias[co];
        for (int ci = 0; ci < in.c; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int sy = y + (ky - pad) * dilation, sx = x + (kx - pad) * dilation;
              if (sy < 0 || sy >= in.h || sx < 0 || sx >= in.w) continue;
              s += weight[((static_cast<std::size_t>(co) * in.c + ci) * k + ky) * k + kx] *
                   in.at(ci, sy, sx);
            }
        out.at(co, y, x) = s;
      }
}

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, int k,
                     const Tensor<T>& grad_out, Tensor<T>* grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias, int dilation) {
  const int out_c = grad_out.c;
  check_shapes(in, weight.size(), k, out_c, dilation);
  const int pad = k / 2;
  if (grad_in != nullptr) *grad_in = Tensor<T>(in.c, in.h, in.w);
  for (int co = 0; co < out_c; ++co)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        const T g = grad_out.at(co, y, x);
        grad_bias[co] += g;
        for (int ci = 0; ci < in.c; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int sy = y + (ky - pad) * dilation, sx = x + (kx - pad) * dilation;
              if (sy < 0 || sy >= in.h || sx < 0 || sx >= in.w) continue;
              const std::size_t wi = ((static_cast<std::size_t>(co) * in.c + ci) * k + ky) * k + kx;
              grad_weight[wi] += g * in.at(ci, sy, sx);
              if (grad_in != nullptr) grad_in->at(ci, sy, sx) += g * weight[wi];
            }
      }
}

}  // namespace serial

#define KTL_INSTANTIATE_CONV(T)                                                                \
  template void conv2d_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,    \
                                  int, Tensor<T>&, int);                                            \
  template void conv2d_backward<T>(const Tensor<T>&, std::span<const T>, int, const Tensor<T>&, \
                                   Tensor<T>*, std::span<T>, std::span<T>, int);                    \
  template void serial::conv2d_forward<T>(const Tensor<T>&, std::span<const T>,                \
                                          std::span<const T>, int, Tensor<T>&, int);                \
  template void serial::conv2d_backward<T>(const Tensor<T>&, std::span<const T>, int,          \
                                           const Tensor<T>&, Tensor<T>*, std::span<T>,         \
                                           std::span<T>, int);

KTL_INSTANTIATE_CONV(float)
KTL_INSTANTIATE_CONV(double)

}  // namespace ktl::kernels
