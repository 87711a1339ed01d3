#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "atres/tensor.hpp"

namespace atres {

enum class Padding { same, valid };

// Weights [C_out, C_in, k, k] and bias [C_out] of one (possibly dilated)
// square convolution.
template <class T>
struct BasicConvParams {
  BasicTensor<T> weight;
  BasicTensor<T> bias;
  std::size_t dilation = 1;
  std::size_t stride = 1;
  Padding padding = Padding::same;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t kernel() const { return weight.dim(2); }
  std::size_t pad() const {
    return padding == Padding::same ? dilation * (kernel() - 1) / 2 : 0;
  }
};

using ConvParams = BasicConvParams<float>;

struct ConvGeometry {
  std::size_t batch, in_ch, out_ch, height, width, kernel, dilation, stride, pad, out_h, out_w;
};

namespace detail {

template <class T>
ConvGeometry conv_geometry(const BasicTensor<T>& input, const BasicConvParams<T>& p) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be NCHW, got " + shape_str(input.shape()));
  if (p.weight.rank() != 4 || p.weight.dim(2) != p.weight.dim(3)) {
    throw ShapeError("conv2d: weight must be [C_out, C_in, k, k], got " + shape_str(p.weight.shape()));
  }
  if (p.bias.rank() != 1 || p.bias.dim(0) != p.weight.dim(0)) {
    throw ShapeError("conv2d: bias shape " + shape_str(p.bias.shape()) + " does not match " +
                     std::to_string(p.weight.dim(0)) + " output channels");
  }
  if (p.kernel() % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
  if (p.dilation < 1 || p.stride < 1) throw ShapeError("conv2d: dilation and stride must be >= 1");
  if (input.dim(1) != p.in_channels()) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) + " channels, weight expects " +
                     std::to_string(p.in_channels()));
  }
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.in_ch = input.dim(1);
  g.out_ch = p.out_channels();
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.kernel = p.kernel();
  g.dilation = p.dilation;
  g.stride = p.stride;
  g.pad = p.pad();
  const std::size_t extent = p.dilation * (p.kernel() - 1) + 1;
  const std::size_t ph = g.height + 2 * g.pad;
  const std::size_t pw = g.width + 2 * g.pad;
  if (extent > ph || extent > pw) {
    throw ShapeError("conv2d: effective kernel extent " + std::to_string(extent) + " (dilation " +
                     std::to_string(p.dilation) + ") exceeds padded input " + std::to_string(ph) + "x" +
                     std::to_string(pw) + "; input must be at least " + std::to_string(extent - 2 * g.pad) +
                     " pixels on each side");
  }
  g.out_h = (ph - extent) / g.stride + 1;
  g.out_w = (pw - extent) / g.stride + 1;
  return g;
}

// Output index range [lo, hi) for which `o * stride + off` lands in [0, n).
inline void tap_range(std::ptrdiff_t off, std::size_t stride, std::size_t n, std::size_t out_n,
                      std::size_t& lo, std::size_t& hi) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t l = off >= 0 ? 0 : (-off + s - 1) / s;
  std::ptrdiff_t h = (static_cast<std::ptrdiff_t>(n) - 1 - off);
  h = h < 0 ? -1 : h / s;
  h = std::min<std::ptrdiff_t>(h, static_cast<std::ptrdiff_t>(out_n) - 1);
  lo = static_cast<std::size_t>(l);
  hi = h < l ? lo : static_cast<std::size_t>(h + 1);
}

// Kernel taps whose receptive row and column ranges are non-empty. Taps that
// only ever read padding contribute nothing and are dropped from the GEMM.
struct ConvTap {
  std::size_t index;  // i * k + j
  std::ptrdiff_t dy, dx;
  std::size_t y0, y1, x0, x1;
};

inline std::vector<ConvTap> live_taps(const ConvGeometry& g) {
  std::vector<ConvTap> taps;
  for (std::size_t i = 0; i < g.kernel; ++i) {
    for (std::size_t j = 0; j < g.kernel; ++j) {
      ConvTap t{};
      t.index = i * g.kernel + j;
      t.dy = static_cast<std::ptrdiff_t>(i * g.dilation) - static_cast<std::ptrdiff_t>(g.pad);
      t.dx = static_cast<std::ptrdiff_t>(j * g.dilation) - static_cast<std::ptrdiff_t>(g.pad);
      tap_range(t.dy, g.stride, g.height, g.out_h, t.y0, t.y1);
      tap_range(t.dx, g.stride, g.width, g.out_w, t.x0, t.x1);
      if (t.y0 < t.y1 && t.x0 < t.x1) taps.push_back(t);
    }
  }
  return taps;
}

// Column matrix for one sample: row (c, tap) holds the input values that tap
// reads for every output pixel, zero where it reads padding.
template <class T>
void im2col(const ConvGeometry& g, const std::vector<ConvTap>& taps, const T* in, T* col) {
  const std::size_t P = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const T* ip = in + c * g.height * g.width;
    for (std::size_t t = 0; t < taps.size(); ++t) {
      const ConvTap& tp = taps[t];
      T* row = col + (c * taps.size() + t) * P;
      std::fill(row, row + P, T(0));
      for (std::size_t y = tp.y0; y < tp.y1; ++y) {
        T* dst = row + y * g.out_w;
        const T* src = ip + static_cast<std::ptrdiff_t>(y * g.stride + tp.dy) * static_cast<std::ptrdiff_t>(g.width) + tp.dx;
        if (g.stride == 1) {
          std::copy(src + tp.x0, src + tp.x1, dst + tp.x0);
        } else {
          for (std::size_t x = tp.x0; x < tp.x1; ++x) dst[x] = src[x * g.stride];
        }
      }
    }
  }
}

template <class T>
void col2im(const ConvGeometry& g, const std::vector<ConvTap>& taps, const T* col, T* gin) {
  const std::size_t P = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    T* ip = gin + c * g.height * g.width;
    for (std::size_t t = 0; t < taps.size(); ++t) {
      const ConvTap& tp = taps[t];
      const T* row = col + (c * taps.size() + t) * P;
      for (std::size_t y = tp.y0; y < tp.y1; ++y) {
        const T* src = row + y * g.out_w;
        T* dst = ip + static_cast<std::ptrdiff_t>(y * g.stride + tp.dy) * static_cast<std::ptrdiff_t>(g.width) + tp.dx;
        if (g.stride == 1) {
          for (std::size_t x = tp.x0; x < tp.x1; ++x) dst[x] += src[x];
        } else {
          for (std::size_t x = tp.x0; x < tp.x1; ++x) dst[x * g.stride] += src[x];
        }
      }
    }
  }
}

// C[M x P] += A * B[K x P] where A(m, k) = a[m * a_m + k * a_k].
template <class T>
void gemm_acc(std::size_t M, std::size_t K, std::size_t P, const T* a, std::size_t a_m, std::size_t a_k, const T* b,
              T* c) {
  constexpr std::size_t kTile = 512;
  for (std::size_t p0 = 0; p0 < P; p0 += kTile) {
    const std::size_t pn = std::min(kTile, P - p0);
    std::size_t m = 0;
    for (; m + 4 <= M; m += 4) {
      T* c0 = c + m * P + p0;
      T* c1 = c0 + P;
      T* c2 = c1 + P;
      T* c3 = c2 + P;
      for (std::size_t k = 0; k < K; ++k) {
        const T w0 = a[m * a_m + k * a_k];
        const T w1 = a[(m + 1) * a_m + k * a_k];
        const T w2 = a[(m + 2) * a_m + k * a_k];
        const T w3 = a[(m + 3) * a_m + k * a_k];
        const T* br = b + k * P + p0;
#pragma omp simd
        for (std::size_t p = 0; p < pn; ++p) {
          const T v = br[p];
          c0[p] += w0 * v;
          c1[p] += w1 * v;
          c2[p] += w2 * v;
          c3[p] += w3 * v;
        }
      }
    }
    for (; m < M; ++m) {
      T* c0 = c + m * P + p0;
      for (std::size_t k = 0; k < K; ++k) {
        const T w0 = a[m * a_m + k * a_k];
        const T* br = b + k * P + p0;
#pragma omp simd
        for (std::size_t p = 0; p < pn; ++p) c0[p] += w0 * br[p];
      }
    }
  }
}

// G[M x K] += A[M x P] * B[K x P]^T
template <class T>
void gemm_nt_acc(std::size_t M, std::size_t K, std::size_t P, const T* a, const T* b, T* gmat) {
  for (std::size_t m = 0; m < M; ++m) {
    const T* ar = a + m * P;
    for (std::size_t k = 0; k < K; ++k) {
      const T* br = b + k * P;
      T s = 0;
#pragma omp simd reduction(+ : s)
      for (std::size_t p = 0; p < P; ++p) s += ar[p] * br[p];
      gmat[m * K + k] += s;
    }
  }
}

// Weights gathered to [C_out, C_in * live_taps].
template <class T>
std::vector<T> gather_weights(const ConvGeometry& g, const std::vector<ConvTap>& taps, const T* w) {
  const std::size_t kk = g.kernel * g.kernel;
  const std::size_t R = g.in_ch * taps.size();
  std::vector<T> wc(g.out_ch * R);
  for (std::size_t o = 0; o < g.out_ch; ++o)
    for (std::size_t c = 0; c < g.in_ch; ++c)
      for (std::size_t t = 0; t < taps.size(); ++t) wc[o * R + c * taps.size() + t] = w[(o * g.in_ch + c) * kk + taps[t].index];
  return wc;
}

template <class T>
void conv_forward(const ConvGeometry& g, const T* in, const T* w, const T* b, T* out) {
  const auto taps = live_taps(g);
  const std::size_t P = g.out_h * g.out_w;
  const std::size_t R = g.in_ch * taps.size();
  const std::vector<T> wc = gather_weights(g, taps, w);
  std::vector<T> col(R * P);
  for (std::size_t n = 0; n < g.batch; ++n) {
    T* op = out + n * g.out_ch * P;
    for (std::size_t o = 0; o < g.out_ch; ++o) std::fill(op + o * P, op + (o + 1) * P, b[o]);
    if (R == 0) continue;
    im2col(g, taps, in + n * g.in_ch * g.height * g.width, col.data());
    gemm_acc(g.out_ch, R, P, wc.data(), R, std::size_t{1}, col.data(), op);
  }
}

template <class T>
void conv_backward_input(const ConvGeometry& g, const T* gout, const T* w, T* gin) {
  const auto taps = live_taps(g);
  const std::size_t P = g.out_h * g.out_w;
  const std::size_t R = g.in_ch * taps.size();
  if (R == 0) return;
  const std::vector<T> wc = gather_weights(g, taps, w);
  std::vector<T> col(R * P);
  for (std::size_t n = 0; n < g.batch; ++n) {
    std::fill(col.begin(), col.end(), T(0));
    // col = Wc^T * gout
    gemm_acc(R, g.out_ch, P, wc.data(), std::size_t{1}, R, gout + n * g.out_ch * P, col.data());
    col2im(g, taps, col.data(), gin + n * g.in_ch * g.height * g.width);
  }
}

template <class T>
void conv_backward_params(const ConvGeometry& g, const T* gout, const T* in, T* gw, T* gb) {
  const std::size_t P = g.out_h * g.out_w;
  for (std::size_t n = 0; n < g.batch && gb; ++n) {
    for (std::size_t o = 0; o < g.out_ch; ++o) {
      const T* op = gout + (n * g.out_ch + o) * P;
      T s = 0;
#pragma omp simd reduction(+ : s)
      for (std::size_t q = 0; q < P; ++q) s += op[q];
      gb[o] += s;
    }
  }
  if (!gw) return;
  const auto taps = live_taps(g);
  const std::size_t R = g.in_ch * taps.size();
  if (R == 0) return;
  std::vector<T> col(R * P);
  std::vector<T> gwc(g.out_ch * R, T(0));
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(g, taps, in + n * g.in_ch * g.height * g.width, col.data());
    gemm_nt_acc(g.out_ch, R, P, gout + n * g.out_ch * P, col.data(), gwc.data());
  }
  const std::size_t kk = g.kernel * g.kernel;
  for (std::size_t o = 0; o < g.out_ch; ++o)
    for (std::size_t c = 0; c < g.in_ch; ++c)
      for (std::size_t t = 0; t < taps.size(); ++t) gw[(o * g.in_ch + c) * kk + taps[t].index] += gwc[o * R + c * taps.size() + t];
}

}  // namespace detail

// Dilated 2-D convolution (cross-correlation) with zero padding. Tap (i, j)
// of output (y, x) reads input (y*stride + dilation*i - pad, x*stride + dilation*j - pad).
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicConvParams<T>& p) {
  const ConvGeometry g = detail::conv_geometry(input, p);
  std::vector<T> out(g.batch * g.out_ch * g.out_h * g.out_w);
  detail::conv_forward(g, input.data().data(), p.weight.data().data(), p.bias.data().data(), out.data());
  return make_result<T>(
      "conv2d(d=" + std::to_string(p.dilation) + ")", {g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out),
      {input, p.weight, p.bias}, [g, input, w = p.weight, b = p.bias](TensorImpl<T>& y) {
        const T* gout = y.grad.data();
        if (auto gin = grad_target(input); !gin.empty()) {
          detail::conv_backward_input(g, gout, w.data().data(), gin.data());
        }
        auto gw = grad_target(w);
        auto gb = grad_target(b);
        if (!gw.empty() || !gb.empty()) {
          detail::conv_backward_params(g, gout, input.data().data(), gw.empty() ? nullptr : gw.data(),
                                       gb.empty() ? nullptr : gb.data());
        }
      });
}

}  // namespace atres
