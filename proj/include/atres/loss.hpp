#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "atres/ops.hpp"
#include "atres/tensor.hpp"

namespace atres {

namespace detail {
template <class T>
void check_dice_inputs(const char* op, const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  require_same_shape(op, pred, target);
  for (T v : target.data()) {
    if (v != T(0) && v != T(1)) throw ShapeError(std::string(op) + ": target must be binary {0,1}");
  }
}
}  // namespace detail

// Soft Dice over the whole tensor: (2*sum(p*t) + s) / (sum(p) + sum(t) + s).
// s = 0 gives the plain set formula; it is undefined (NaN) when both sums are 0.
template <class T>
double dice_coefficient(const BasicTensor<T>& pred, const BasicTensor<T>& target, double smooth = 1.0) {
  detail::check_dice_inputs("dice_coefficient", pred, target);
  auto p = pred.data();
  auto t = target.data();
  double inter = 0.0, sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += static_cast<double>(p[i]) * t[i];
    sp += p[i];
    st += t[i];
  }
  return (2.0 * inter + smooth) / (sp + st + smooth);
}

// 1 - dice_coefficient, differentiable with respect to `pred`.
template <class T>
BasicTensor<T> dice_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target, double smooth = 1.0) {
  detail::check_dice_inputs("dice_loss", pred, target);
  auto p = pred.data();
  auto t = target.data();
  double inter = 0.0, sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += static_cast<double>(p[i]) * t[i];
    sp += p[i];
    st += t[i];
  }
  const double num = 2.0 * inter + smooth;
  const double den = sp + st + smooth;
  if (den == 0.0) throw NumericalError("dice_loss: empty prediction and target with zero smoothing");
  const double loss = 1.0 - num / den;
  return make_result<T>("dice_loss", {1}, {static_cast<T>(loss)}, {pred},
                        [pred, target, num, den](TensorImpl<T>& y) {
                          if (auto g = grad_target(pred); !g.empty()) {
                            auto t = target.data();
                            const double up = y.grad[0];
                            // d/dp_i of -(num/den) = -(2 t_i den - num) / den^2
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              g[i] += static_cast<T>(-up * (2.0 * t[i] * den - num) / (den * den));
                            }
                          }
                        });
}

}  // namespace atres
