#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "atres/conv.hpp"
#include "atres/loss.hpp"
#include "atres/ops.hpp"
#include "atres/random.hpp"
#include "atres/tensor.hpp"

namespace atres {

using DTensor = BasicTensor<double>;

// One differentiable function of several leaf tensors, reduced to a scalar.
struct GradCase {
  std::string name;
  std::vector<DTensor> inputs;
  std::function<DTensor(const std::vector<DTensor>&)> loss;
};

struct GradCheckOptions {
  double eps = 1e-3;
  double denom_floor = 1e-3;      // relative error is |a - n| / max(|a|, |n|, floor)
  std::size_t max_coords = 48;    // per input tensor; larger tensors are sampled
  double tolerance = 1e-3;
};

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords = 0;
  bool pass = false;
};

// Compares reverse-mode gradients with central differences.
inline GradCheckReport gradcheck(const GradCase& c, Rng& rng, const GradCheckOptions& opt = {}) {
  std::vector<DTensor> leaves;
  for (const auto& t : c.inputs) {
    DTensor l = t.clone();
    l.set_requires_grad(true);
    leaves.push_back(l);
  }
  const DTensor loss = c.loss(leaves);
  backward(loss);

  GradCheckReport rep;
  rep.name = c.name;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    std::vector<std::size_t> coords;
    if (leaf.numel() <= opt.max_coords) {
      for (std::size_t i = 0; i < leaf.numel(); ++i) coords.push_back(i);
    } else {
      for (std::size_t k = 0; k < opt.max_coords; ++k) coords.push_back(rng.below(leaf.numel()));
    }
    for (auto i : coords) {
      auto d = leaf.mutable_data();
      const double orig = d[i];
      double fp, fm;
      {
        NoGradGuard ng;
        d[i] = orig + opt.eps;
        fp = c.loss(leaves).item();
        d[i] = orig - opt.eps;
        fm = c.loss(leaves).item();
        d[i] = orig;
      }
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double err = std::abs(analytic[i] - numeric) /
                         std::max({std::abs(analytic[i]), std::abs(numeric), opt.denom_floor});
      rep.max_rel_error = std::max(rep.max_rel_error, err);
      ++rep.coords;
    }
  }
  rep.pass = rep.max_rel_error < opt.tolerance;
  return rep;
}

namespace detail {

// Values with |v| >= margin, so a small perturbation never crosses 0.
inline DTensor away_from_zero(Shape s, Rng& rng, double margin) {
  DTensor t(std::move(s));
  for (auto& v : t.mutable_data()) {
    double u = rng.uniform(margin, 1.0);
    v = rng.uniform() < 0.5 ? -u : u;
  }
  return t;
}

// Distinct values 0.01 apart in random order (no ties inside pooling windows).
inline DTensor distinct_values(Shape s, Rng& rng) {
  DTensor t(std::move(s));
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = 0.01 * static_cast<double>(i) - 0.005 * static_cast<double>(d.size());
  for (std::size_t i = d.size(); i > 1; --i) std::swap(d[i - 1], d[rng.below(i)]);
  return t;
}

// Wraps `op` so the output is contracted with fixed random weights.
inline std::function<DTensor(const std::vector<DTensor>&)> contracted(
    std::function<DTensor(const std::vector<DTensor>&)> op, const Shape& out_shape, Rng& rng) {
  const DTensor w = DTensor::randn(out_shape, rng);
  return [op = std::move(op), w](const std::vector<DTensor>& in) { return weighted_sum(op(in), w); };
}

}  // namespace detail

// The op suite for one seed.
inline std::vector<GradCase> gradcheck_suite(std::uint64_t seed) {
  Rng rng = Rng(seed).fork(0x9c);
  std::vector<GradCase> cases;
  const std::size_t dilations[] = {1, 2, 4, 8, 16, 32};
  for (std::size_t d : dilations) {
    const std::size_t hw = std::max<std::size_t>(6, d + 4);
    const Shape xs{1, 2, hw, hw + 1};
    GradCase c;
    c.name = "conv2d(d=" + std::to_string(d) + ")";
    c.inputs = {DTensor::randn(xs, rng), DTensor::randn({3, 2, 3, 3}, rng, 0.5), DTensor::randn({3}, rng, 0.1)};
    c.loss = detail::contracted(
        [d](const std::vector<DTensor>& in) {
          BasicConvParams<double> p{in[1], in[2], d};
          return conv2d(in[0], p);
        },
        {1, 3, hw, hw + 1}, rng);
    cases.push_back(std::move(c));
  }
  const Shape s{2, 3, 4, 6};
  cases.push_back({"add", {DTensor::randn(s, rng), DTensor::randn(s, rng)},
                   detail::contracted([](const auto& in) { return add(in[0], in[1]); }, s, rng)});
  cases.push_back({"mul", {DTensor::randn(s, rng), DTensor::randn(s, rng)},
                   detail::contracted([](const auto& in) { return mul(in[0], in[1]); }, s, rng)});
  cases.push_back({"relu", {detail::away_from_zero(s, rng, 0.05)},
                   detail::contracted([](const auto& in) { return relu(in[0]); }, s, rng)});
  cases.push_back({"sigmoid", {DTensor::randn(s, rng, 3.0)},
                   detail::contracted([](const auto& in) { return sigmoid(in[0]); }, s, rng)});
  cases.push_back({"maxpool2x2", {detail::distinct_values(s, rng)},
                   detail::contracted([](const auto& in) { return maxpool2x2(in[0]); }, {2, 3, 2, 3}, rng)});
  cases.push_back({"upsample2x", {DTensor::randn(s, rng)},
                   detail::contracted([](const auto& in) { return upsample2x(in[0]); }, {2, 3, 8, 12}, rng)});
  cases.push_back({"concat_channels", {DTensor::randn(s, rng), DTensor::randn({2, 1, 4, 6}, rng)},
                   detail::contracted([](const auto& in) { return concat_channels(in[0], in[1]); }, {2, 4, 4, 6},
                                      rng)});
  {
    GradCase c{"batchnorm(train)", {DTensor::randn(s, rng, 2.0), DTensor::uniform({3}, rng, 0.5, 1.5),
                                    DTensor::randn({3}, rng)}, {}};
    c.loss = detail::contracted(
        [](const std::vector<DTensor>& in) {
          BatchNormStats st(3);
          return batchnorm2d(in[0], in[1], in[2], st, true);
        },
        s, rng);
    cases.push_back(std::move(c));
  }
  {
    BatchNormStats st(3);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      st.mean[ch] = rng.uniform(-1, 1);
      st.var[ch] = rng.uniform(0.5, 2);
    }
    GradCase c{"batchnorm(eval)", {DTensor::randn(s, rng), DTensor::uniform({3}, rng, 0.5, 1.5),
                                   DTensor::randn({3}, rng)}, {}};
    c.loss = detail::contracted(
        [st](const std::vector<DTensor>& in) {
          BatchNormStats copy = st;
          return batchnorm2d(in[0], in[1], in[2], copy, false);
        },
        s, rng);
    cases.push_back(std::move(c));
  }
  cases.push_back({"dropout(off)", {DTensor::randn(s, rng)}, detail::contracted(
                                                                 [](const auto& in) {
                                                                   Rng r(1);
                                                                   return dropout(in[0], 0.25, false, r);
                                                                 },
                                                                 s, rng)});
  {
    const std::uint64_t mask_seed = rng.next_u64();
    cases.push_back({"dropout(fixed mask)", {DTensor::randn(s, rng)}, detail::contracted(
                                                                          [mask_seed](const auto& in) {
                                                                            Rng r(mask_seed);
                                                                            return dropout(in[0], 0.25, true, r);
                                                                          },
                                                                          s, rng)});
  }
  {
    DTensor target(s);
    for (auto& v : target.mutable_data()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    cases.push_back({"dice_loss", {DTensor::uniform(s, rng, 0.05, 0.95)},
                     [target](const std::vector<DTensor>& in) { return dice_loss(in[0], target, 1.0); }});
  }
  return cases;
}

inline std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& opt = {}) {
  Rng rng = Rng(seed).fork(0xfd);
  std::vector<GradCheckReport> out;
  for (const auto& c : gradcheck_suite(seed)) out.push_back(gradcheck(c, rng, opt));
  return out;
}

}  // namespace atres
