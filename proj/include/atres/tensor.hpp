#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "atres/error.hpp"
#include "atres/random.hpp"

namespace atres {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

// Disables op recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
class BasicTensor;

template <class T>
struct TensorImpl;

// One executed differentiable operation. `backward` reads the output's grad
// and accumulates into the grads of `inputs`.
template <class T>
struct Node {
  std::string op;
  std::vector<BasicTensor<T>> inputs;
  std::function<void(TensorImpl<T>& out)> backward;
  bool consumed = false;
};

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::shared_ptr<Node<T>> creator;

  std::span<T> ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <class T>
void check_finite(std::string_view op, std::span<const T> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << op << ": non-finite value " << values[i] << " at flat index " << i;
      throw NumericalError(os.str());
    }
  }
}

// Dense row-major tensor handle. Copies share storage; use clone() for a
// deep copy. Image tensors are NCHW.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<TensorImpl<T>>()) {
    validate(shape);
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  BasicTensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
    validate(shape);
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                       shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), T(0)); }
  static BasicTensor full(Shape shape, T v) { return BasicTensor(std::move(shape), v); }

  static BasicTensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    BasicTensor t(std::move(shape));
    for (auto& v : t.impl_->data) v = static_cast<T>(rng.normal() * stddev);
    return t;
  }

  static BasicTensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    BasicTensor t(std::move(shape));
    for (auto& v : t.impl_->data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t dim(std::size_t i) const { return impl().shape.at(i); }
  std::size_t numel() const { return impl().data.size(); }

  std::span<const T> data() const { return impl().data; }
  // Direct write access; meant for leaves (parameters, inputs) outside a
  // recorded computation.
  std::span<T> mutable_data() { return impl().data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
    return impl().data[0];
  }

  T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    const auto& s = impl().shape;
    return impl().data[((n * s[1] + c) * s[2] + y) * s[3] + x];
  }

  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const T> grad() const { return impl().grad; }
  std::span<T> mutable_grad() { return impl().ensure_grad(); }
  void zero_grad() {
    if (!impl().grad.empty()) std::fill(impl().grad.begin(), impl().grad.end(), T(0));
  }

  bool requires_grad() const { return impl().requires_grad; }
  BasicTensor& set_requires_grad(bool on = true) {
    impl().requires_grad = on;
    return *this;
  }

  bool is_leaf() const { return impl().creator == nullptr; }
  const std::shared_ptr<Node<T>>& creator() const { return impl().creator; }

  // New leaf with the same values and no history.
  BasicTensor detach() const { return BasicTensor(shape(), impl().data); }

  // Deep copy including the requires_grad flag (no history, no grad).
  BasicTensor clone() const {
    BasicTensor t(shape(), impl().data);
    t.impl_->requires_grad = impl().requires_grad;
    return t;
  }

  BasicTensor reshape(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      throw ShapeError("reshape: " + shape_str(this->shape()) + " -> " + shape_str(shape));
    }
    return BasicTensor(std::move(shape), impl().data);
  }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> v(impl().data.begin(), impl().data.end());
    return BasicTensor<U>(shape(), std::move(v));
  }

  bool same_storage(const BasicTensor& o) const { return impl_ == o.impl_; }

  TensorImpl<T>& impl() const {
    if (!impl_) throw ShapeError("use of an undefined tensor");
    return *impl_;
  }
  const std::shared_ptr<TensorImpl<T>>& impl_ptr() const { return impl_; }

 private:
  static void validate(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor: shape must have at least one extent");
    for (auto e : shape) {
      if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
    }
  }

  std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;

// Build an op result; records a node when grad mode is on and any input
// takes part in differentiation. Non-finite outputs abort with the op name.
template <class T, class Backward>
BasicTensor<T> make_result(std::string op, Shape shape, std::vector<T> values,
                           std::vector<BasicTensor<T>> inputs, Backward&& backward) {
  check_finite<T>(op, values);
  BasicTensor<T> out(std::move(shape), std::move(values));
  const bool track = grad_mode_enabled() &&
                     std::any_of(inputs.begin(), inputs.end(),
                                 [](const BasicTensor<T>& t) { return t.requires_grad(); });
  if (track) {
    auto node = std::make_shared<Node<T>>();
    node->op = std::move(op);
    node->inputs = std::move(inputs);
    node->backward = std::forward<Backward>(backward);
    out.impl().creator = std::move(node);
    out.impl().requires_grad = true;
  }
  return out;
}

// Ordered record of the operations that produced a tensor: every op appears
// after the ops producing its inputs.
template <class T>
class OpTape {
 public:
  static OpTape record(const BasicTensor<T>& root) {
    OpTape tape;
    if (!root.creator()) return tape;
    std::unordered_set<const TensorImpl<T>*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<std::shared_ptr<TensorImpl<T>>, std::size_t>> stack;
    stack.emplace_back(root.impl_ptr(), 0);
    seen.insert(root.impl_ptr().get());
    while (!stack.empty()) {
      auto& [t, next] = stack.back();
      const auto& node = t->creator;
      if (node && next < node->inputs.size()) {
        const auto& in = node->inputs[next++].impl_ptr();
        if (in->creator && seen.insert(in.get()).second) stack.emplace_back(in, 0);
        continue;
      }
      tape.order_.push_back(t);
      stack.pop_back();
    }
    return tape;
  }

  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }

  std::vector<std::string> op_names() const {
    std::vector<std::string> names;
    names.reserve(order_.size());
    for (const auto& t : order_) names.push_back(t->creator->op);
    return names;
  }

  // Seeds d(root)/d(root) = 1 and runs every op's backward once, newest
  // first. Consumes the graph.
  void run() {
    if (order_.empty()) throw TapeError("backward: tensor was not produced by recorded operations");
    auto& root = *order_.back();
    if (root.data.size() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(root.shape));
    }
    for (const auto& t : order_) {
      if (t->creator->consumed) {
        throw TapeError("backward: graph already consumed; recompute the forward pass first");
      }
    }
    root.ensure_grad()[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      auto& t = **it;
      auto node = t.creator;
      if (t.grad.empty()) t.ensure_grad();
      node->backward(t);
      check_finite<T>(node->op + " (backward)", std::span<const T>(t.grad));
      node->consumed = true;
      node->backward = nullptr;
    }
    for (const auto& t : order_) t->creator->inputs.clear();
  }

 private:
  std::vector<std::shared_ptr<TensorImpl<T>>> order_;
};

template <class T>
void backward(const BasicTensor<T>& loss) {
  if (!loss.creator()) throw TapeError("backward: tensor has no recorded operations");
  OpTape<T>::record(loss).run();
}

// Accumulation target for an input's gradient, or an empty span when the
// input does not participate in differentiation.
template <class T>
std::span<T> grad_target(const BasicTensor<T>& t) {
  if (!t.requires_grad()) return {};
  return t.impl().ensure_grad();
}

}  // namespace atres
