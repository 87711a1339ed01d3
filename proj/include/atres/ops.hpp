#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "atres/random.hpp"
#include "atres/tensor.hpp"

namespace atres {

namespace detail {
template <class T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class T>
void require_nchw(const char* op, const BasicTensor<T>& x) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected NCHW tensor, got " + shape_str(x.shape()));
}
}  // namespace detail

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("add", a, b);
  auto av = a.data();
  auto bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [a, b](TensorImpl<T>& y) {
    for (const auto* t : {&a, &b}) {
      if (auto g = grad_target(*t); !g.empty()) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += y.grad[i];
      }
    }
  });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  auto av = a.data();
  auto bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [a, b](TensorImpl<T>& y) {
    if (auto g = grad_target(a); !g.empty()) {
      auto bv = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += y.grad[i] * bv[i];
    }
    if (auto g = grad_target(b); !g.empty()) {
      auto av = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += y.grad[i] * av[i];
    }
  });
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  return make_result<T>("relu", x.shape(), std::move(out), {x}, [x](TensorImpl<T>& y) {
    if (auto g = grad_target(x); !g.empty()) {
      auto xv = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] > T(0)) g[i] += y.grad[i];
      }
    }
  });
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Split on sign so exp never overflows.
    if (xv[i] >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-xv[i]));
    } else {
      const T e = std::exp(xv[i]);
      out[i] = e / (T(1) + e);
    }
  }
  return make_result<T>("sigmoid", x.shape(), std::move(out), {x}, [x](TensorImpl<T>& y) {
    if (auto g = grad_target(x); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += y.grad[i] * y.data[i] * (T(1) - y.data[i]);
    }
  });
}

// 2x2 max-pool, stride 2. Gradient goes to the first maximal element of each
// window (row-major order).
template <class T>
BasicTensor<T> maxpool2x2(const BasicTensor<T>& x) {
  detail::require_nchw("maxpool2x2", x);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2x2: spatial extent " + std::to_string(h) + "x" + std::to_string(w) + " is odd");
  }
  const std::size_t oh = h / 2, ow = w / 2;
  auto xv = x.data();
  std::vector<T> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t ib = p * h * w, ob = p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = ib + (2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ib + (2 * y + dy) * w + 2 * xx + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        out[ob + y * ow + xx] = xv[best];
        argmax[ob + y * ow + xx] = best;
      }
    }
  }
  return make_result<T>("maxpool2x2", {n, c, oh, ow}, std::move(out), {x},
                        [x, argmax = std::move(argmax)](TensorImpl<T>& y) {
                          if (auto g = grad_target(x); !g.empty()) {
                            for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += y.grad[i];
                          }
                        });
}

// Nearest-neighbour 2x upsampling.
template <class T>
BasicTensor<T> upsample2x(const BasicTensor<T>& x) {
  detail::require_nchw("upsample2x", x);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = 2 * h, ow = 2 * w;
  auto xv = x.data();
  std::vector<T> out(n * c * oh * ow);
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      const T* src = xv.data() + p * h * w + (y / 2) * w;
      T* dst = out.data() + p * oh * ow + y * ow;
      for (std::size_t xx = 0; xx < ow; ++xx) dst[xx] = src[xx / 2];
    }
  }
  return make_result<T>("upsample2x", {n, c, oh, ow}, std::move(out), {x}, [x, n, c, h, w](TensorImpl<T>& y) {
    if (auto g = grad_target(x); !g.empty()) {
      const std::size_t ow = 2 * w;
      for (std::size_t p = 0; p < n * c; ++p) {
        for (std::size_t yy = 0; yy < 2 * h; ++yy) {
          const T* src = y.grad.data() + p * 4 * h * w + yy * ow;
          T* dst = g.data() + p * h * w + (yy / 2) * w;
          for (std::size_t xx = 0; xx < ow; ++xx) dst[xx / 2] += src[xx];
        }
      }
    }
  });
}

template <class T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_nchw("concat_channels", a);
  detail::require_nchw("concat_channels", b);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<T> out(n * (ca + cb) * hw);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(bv.data() + i * cb * hw, cb * hw, out.data() + i * (ca + cb) * hw + ca * hw);
  }
  return make_result<T>("concat_channels", {n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {a, b},
                        [a, b, n, ca, cb, hw](TensorImpl<T>& y) {
                          if (auto g = grad_target(a); !g.empty()) {
                            for (std::size_t i = 0; i < n; ++i) {
                              const T* src = y.grad.data() + i * (ca + cb) * hw;
                              for (std::size_t q = 0; q < ca * hw; ++q) g[i * ca * hw + q] += src[q];
                            }
                          }
                          if (auto g = grad_target(b); !g.empty()) {
                            for (std::size_t i = 0; i < n; ++i) {
                              const T* src = y.grad.data() + i * (ca + cb) * hw + ca * hw;
                              for (std::size_t q = 0; q < cb * hw; ++q) g[i * cb * hw + q] += src[q];
                            }
                          }
                        });
}

// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;

  explicit BatchNormStats(std::size_t channels = 0) : mean(channels, 0.0), var(channels, 1.0) {}
};

// Per-channel batch normalization over (N, H, W). Training mode normalizes with
// batch statistics and folds them into `stats` (running = momentum * running +
// (1 - momentum) * batch, unbiased variance); eval mode uses `stats`.
template <class T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                           BatchNormStats& stats, bool training, double momentum = 0.9, double eps = 1e-5) {
  detail::require_nchw("batchnorm2d", x);
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || stats.mean.size() != c || stats.var.size() != c) {
    throw ShapeError("batchnorm2d: parameters do not match " + std::to_string(c) + " channels");
  }
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  const std::size_t m = n * hw;
  std::vector<double> mean(c), inv_std(c);
  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = xv.data() + (i * c + ch) * hw;
        for (std::size_t q = 0; q < hw; ++q) s += p[q];
      }
      const double mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = xv.data() + (i * c + ch) * hw;
        for (std::size_t q = 0; q < hw; ++q) {
          const double d = p[q] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(m);
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      stats.mean[ch] = momentum * stats.mean[ch] + (1.0 - momentum) * mu;
      stats.var[ch] = momentum * stats.var[ch] + (1.0 - momentum) * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = stats.mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.var[ch] + eps);
    }
  }
  std::vector<T> out(xv.size());
  std::vector<T> xhat(training ? xv.size() : 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * hw;
      const T mu = static_cast<T>(mean[ch]);
      const T is = static_cast<T>(inv_std[ch]);
      for (std::size_t q = 0; q < hw; ++q) {
        const T h = (xv[base + q] - mu) * is;
        if (training) xhat[base + q] = h;
        out[base + q] = gv[ch] * h + bv[ch];
      }
    }
  }
  return make_result<T>(
      training ? "batchnorm2d(train)" : "batchnorm2d(eval)", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, training, n, c, hw, m, mean, inv_std, xhat = std::move(xhat)](TensorImpl<T>& y) {
        auto gx = grad_target(x);
        auto gg = grad_target(gamma);
        auto gb = grad_target(beta);
        auto gv = gamma.data();
        auto xv = x.data();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = (i * c + ch) * hw;
            for (std::size_t q = 0; q < hw; ++q) {
              const double h = training ? static_cast<double>(xhat[base + q])
                                        : (static_cast<double>(xv[base + q]) - mean[ch]) * inv_std[ch];
              sum_dy += y.grad[base + q];
              sum_dy_xhat += y.grad[base + q] * h;
            }
          }
          if (!gg.empty()) gg[ch] += static_cast<T>(sum_dy_xhat);
          if (!gb.empty()) gb[ch] += static_cast<T>(sum_dy);
          if (gx.empty()) continue;
          const double gscale = gv[ch] * inv_std[ch];
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = (i * c + ch) * hw;
            for (std::size_t q = 0; q < hw; ++q) {
              if (training) {
                const double h = xhat[base + q];
                const double d = y.grad[base + q] - (sum_dy + h * sum_dy_xhat) / static_cast<double>(m);
                gx[base + q] += static_cast<T>(gscale * d);
              } else {
                gx[base + q] += static_cast<T>(gscale * y.grad[base + q]);
              }
            }
          }
        }
      });
}

// Inverted dropout: in training, zero each element with probability `rate`
// and scale survivors by 1/(1-rate). Identity otherwise.
template <class T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ShapeError("dropout: rate " + std::to_string(rate) + " outside [0, 1)");
  if (!training || rate == 0.0) return x;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  auto xv = x.data();
  std::vector<T> mask(xv.size());
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() < rate ? T(0) : scale;
    out[i] = xv[i] * mask[i];
  }
  return make_result<T>("dropout", x.shape(), std::move(out), {x}, [x, mask = std::move(mask)](TensorImpl<T>& y) {
    if (auto g = grad_target(x); !g.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += y.grad[i] * mask[i];
    }
  });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double s = 0.0;
  for (T v : x.data()) s += v;
  return make_result<T>("sum", {1}, {static_cast<T>(s)}, {x}, [x](TensorImpl<T>& y) {
    if (auto g = grad_target(x); !g.empty()) {
      for (auto& v : g) v += y.grad[0];
    }
  });
}

// Sum of x * weights where `weights` is treated as a constant.
template <class T>
BasicTensor<T> weighted_sum(const BasicTensor<T>& x, const BasicTensor<T>& weights) {
  detail::require_same_shape("weighted_sum", x, weights);
  double s = 0.0;
  auto xv = x.data();
  auto wv = weights.data();
  for (std::size_t i = 0; i < xv.size(); ++i) s += static_cast<double>(xv[i]) * wv[i];
  return make_result<T>("weighted_sum", {1}, {static_cast<T>(s)}, {x}, [x, weights](TensorImpl<T>& y) {
    if (auto g = grad_target(x); !g.empty()) {
      auto wv = weights.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += y.grad[0] * wv[i];
    }
  });
}

}  // namespace atres
