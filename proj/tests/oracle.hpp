#pragma once

#include <cstddef>
#include <functional>
#include <vector>

// Reference implementations kept independent of the library code.
namespace oracle {

// Direct six-loop "same"-padded dilated convolution in double.
// in [N,C,H,W], w [O,C,k,k], b [O]; result [N,O,H,W].
inline std::vector<double> conv2d(const std::vector<double>& in, const std::vector<double>& w,
                                  const std::vector<double>& b, std::size_t N, std::size_t C, std::size_t H,
                                  std::size_t W, std::size_t O, std::size_t k, std::size_t dil) {
  const long pad = static_cast<long>(dil * (k - 1) / 2);
  std::vector<double> out(N * O * H * W, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          double s = b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) {
                const long yy = static_cast<long>(y) + static_cast<long>(dil * i) - pad;
                const long xx = static_cast<long>(x) + static_cast<long>(dil * j) - pad;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                s += w[((o * C + c) * k + i) * k + j] * in[((n * C + c) * H + yy) * W + xx];
              }
          out[((n * O + o) * H + y) * W + x] = s;
        }
  return out;
}

// Central difference of f at x[i].
inline double central_difference(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                 std::size_t i, double eps = 1e-3) {
  const double orig = x[i];
  x[i] = orig + eps;
  const double fp = f(x);
  x[i] = orig - eps;
  const double fm = f(x);
  return (fp - fm) / (2 * eps);
}

}  // namespace oracle
