#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "atres/loss.hpp"
#include "atres/model.hpp"
#include "atres/patch.hpp"

namespace atres {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double base_lr = 1e-3;
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m;  // one buffer per parameter, in parameter order
  std::vector<std::vector<float>> v;
};

// Bias-corrected Adam update. Gradients are validated before any parameter
// moves; a missing gradient counts as zero.
inline void adam_step(std::vector<Tensor>& params, AdamState& st, double lr) {
  if (!(lr >= 0.0)) throw ShapeError("adam_step: learning rate must be >= 0");
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(p.numel(), 0.0f);
      st.v.emplace_back(p.numel(), 0.0f);
    }
  }
  if (st.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (st.m[i].size() != params[i].numel()) throw ShapeError("adam_step: moment buffer shape mismatch");
    if (params[i].has_grad()) check_finite<float>("adam_step gradient #" + std::to_string(i), params[i].grad());
  }
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(st.beta1, t);
  const double c2 = 1.0 - std::pow(st.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      const double mk = st.beta1 * m[k] + (1.0 - st.beta1) * gk;
      const double vk = st.beta2 * v[k] + (1.0 - st.beta2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      w[k] = static_cast<float>(w[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + st.eps));
    }
  }
}

// Cosine annealing without restarts over `total_steps`.
struct CosineSchedule {
  double base_lr = 1e-3;
  std::size_t total_steps = 1;

  double lr(std::size_t t) const {
    const double x = std::min(1.0, static_cast<double>(t) / static_cast<double>(std::max<std::size_t>(total_steps, 1)));
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * x));
  }
};

struct LabeledImage {
  std::string id;
  ImageRGB image;
  BinaryMask mask;
};

struct DatasetSplit {
  std::vector<std::size_t> train, val, test;
};

// Seeded image-level split: round(75%) train, round(15%) validation, rest test.
inline DatasetSplit split_dataset(std::size_t n, std::uint64_t seed, double train_frac = 0.75, double val_frac = 0.15) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng = Rng(seed).fork(0x5b1170);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  std::size_t n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n)));
  if (n > 0) n_train = std::clamp<std::size_t>(n_train, 1, n);
  n_val = std::min(n_val, n - n_train);
  DatasetSplit s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

struct TrainOptions {
  ModelConfig model;
  std::uint64_t seed = 0;
  std::size_t batch_size = 4;
  std::size_t epochs = 100;
  double lr = 1e-3;
  double dice_smooth = 1.0;
  bool augment = true;
  PatchOptions patches;  // size is taken from model.patch_size
  double train_fraction = 0.75;
  double val_fraction = 0.15;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;  // at the epoch's first step
  double train_loss = 0.0;
  double train_dice = 0.0;
  std::optional<double> val_dice;
  double wall_time = 0.0;  // seconds since training start; not part of the deterministic log
};

struct TrainResult {
  Model best;
  Model last;
  AdamState optimizer;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  DatasetSplit split;
  std::size_t train_patches = 0;
  std::size_t val_patches = 0;
};

namespace detail {

inline void stack_batch(const std::vector<Patch>& patches, const std::vector<std::size_t>& order, std::size_t begin,
                        std::size_t end, bool augment_on, Rng& rng, Tensor& x, Tensor& y) {
  const std::size_t S = patches[order[begin]].size;
  const std::size_t n = end - begin;
  x = Tensor({n, 3, S, S});
  y = Tensor({n, 1, S, S});
  auto xd = x.mutable_data();
  auto yd = y.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const Patch& src = patches[order[begin + i]];
    const Patch p = augment_on ? augment(src, random_geo_op(rng)) : src;
    std::copy(p.data.data().begin(), p.data.data().end(), xd.begin() + static_cast<std::ptrdiff_t>(i * 3 * S * S));
    std::copy(p.mask->data().begin(), p.mask->data().end(), yd.begin() + static_cast<std::ptrdiff_t>(i * S * S));
  }
}

inline std::vector<Patch> collect_patches(const std::vector<LabeledImage>& data, const std::vector<std::size_t>& ids,
                                          const PatchOptions& opt) {
  std::vector<Patch> out;
  for (auto i : ids) {
    auto p = extract_training_patches(data[i].image, data[i].mask, opt);
    for (auto& q : p) out.push_back(std::move(q));
  }
  return out;
}

}  // namespace detail

// Mean thresholded (>= 0.5) Dice over patches, smoothed so empty patches count.
inline double patch_dice(Model& model, const std::vector<Patch>& patches, std::size_t batch, double smooth) {
  if (patches.empty()) return 0.0;
  double total = 0.0;
  std::vector<std::size_t> order(patches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng unused(0);
  for (std::size_t b = 0; b < patches.size(); b += batch) {
    const std::size_t e = std::min(patches.size(), b + batch);
    Tensor x, y;
    detail::stack_batch(patches, order, b, e, false, unused, x, y);
    const Tensor pred = model.predict(x);
    const std::size_t plane = y.numel() / (e - b);
    for (std::size_t i = 0; i < e - b; ++i) {
      double inter = 0.0, sp = 0.0, st = 0.0;
      for (std::size_t q = 0; q < plane; ++q) {
        const double p = pred.data()[i * plane + q] >= 0.5f ? 1.0 : 0.0;
        const double t = y.data()[i * plane + q];
        inter += p * t;
        sp += p;
        st += t;
      }
      total += (2.0 * inter + smooth) / (sp + st + smooth);
    }
  }
  return total / static_cast<double>(patches.size());
}

// Trains with Dice loss, Adam and per-step cosine annealing. Keeps the model
// with the best validation Dice (training Dice when there is no validation set).
inline TrainResult train(const TrainOptions& opt, const std::vector<LabeledImage>& data,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (opt.batch_size == 0) throw ShapeError("train: batch_size must be positive");
  if (opt.epochs == 0) throw ShapeError("train: epochs must be positive");
  if (data.empty()) throw DataError("train: dataset is empty");
  const auto t_start = std::chrono::steady_clock::now();
  TrainResult res;
  res.split = split_dataset(data.size(), opt.seed, opt.train_fraction, opt.val_fraction);

  PatchOptions popt = opt.patches;
  popt.size = opt.model.patch_size;
  const std::vector<Patch> train_set = detail::collect_patches(data, res.split.train, popt);
  const std::vector<Patch> val_set = detail::collect_patches(data, res.split.val, popt);
  if (train_set.empty()) {
    throw DataError("train: no training patches survive the tissue filter (patches need at least " +
                    std::to_string(static_cast<int>(std::lround(popt.min_tissue * 100))) +
                    "% pixels with some channel below " + std::to_string(popt.white_level) +
                    "); lower min_tissue or check the images");
  }
  res.train_patches = train_set.size();
  res.val_patches = val_set.size();

  ModelConfig mc = opt.model;
  mc.init_seed = opt.seed;
  Model model(mc);
  model.set_dropout_seed(Rng(opt.seed).fork(0xd20).next_u64());
  std::vector<Tensor> params;
  model.visit_parameters([&](const std::string&, Tensor& t) { params.push_back(t); });

  AdamState adam;
  adam.base_lr = opt.lr;
  const std::size_t steps_per_epoch = (train_set.size() + opt.batch_size - 1) / opt.batch_size;
  const CosineSchedule sched{opt.lr, steps_per_epoch * opt.epochs};
  std::size_t step = 0;
  bool have_best = false;

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng rng = Rng(opt.seed).fork(1000 + epoch);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = sched.lr(step);
    model.train();
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += opt.batch_size) {
      const std::size_t e = std::min(order.size(), b + opt.batch_size);
      Tensor x, y;
      detail::stack_batch(train_set, order, b, e, opt.augment, rng, x, y);
      model.zero_grad();
      const Tensor pred = model.forward(x);
      const Tensor loss = dice_loss(pred, y, opt.dice_smooth);
      backward(loss);
      adam_step(params, adam, sched.lr(step));
      ++step;
      loss_sum += loss.item();
    }
    rec.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
    rec.train_dice = 1.0 - rec.train_loss;
    model.eval();
    if (!val_set.empty()) rec.val_dice = patch_dice(model, val_set, opt.batch_size, opt.dice_smooth);
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    const double metric = rec.val_dice.value_or(rec.train_dice);
    if (!have_best || metric > res.best_metric) {
      have_best = true;
      res.best_metric = metric;
      res.best_epoch = epoch;
      res.best = model.clone();
    }
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  model.eval();
  res.last = std::move(model);
  res.best.eval();
  res.optimizer = std::move(adam);
  return res;
}

}  // namespace atres
