#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "atres/model.hpp"
#include "atres/patch.hpp"

namespace atres {

struct SegmentationMap {
  enum class Kind { prob, binary };

  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;
  Kind kind = Kind::prob;

  SegmentationMap() = default;
  SegmentationMap(std::size_t w, std::size_t h, Kind k = Kind::prob, float fill = 0.0f)
      : width(w), height(h), values(w * h, fill), kind(k) {}

  float at(std::size_t x, std::size_t y) const { return values[y * width + x]; }

  void validate() const {
    if (values.size() != width * height) throw ShapeError("segmentation map: value count does not match extent");
    for (float v : values) {
      if (kind == Kind::prob && !(v >= 0.0f && v <= 1.0f)) throw ShapeError("segmentation map: probability outside [0,1]");
      if (kind == Kind::binary && v != 0.0f && v != 1.0f) throw ShapeError("segmentation map: binary value not in {0,1}");
    }
  }

  bool operator==(const SegmentationMap&) const = default;
};

enum class PadFill { zero, white, reflect };

inline PadFill parse_pad_fill(std::string_view s) {
  if (s == "zero") return PadFill::zero;
  if (s == "white") return PadFill::white;
  if (s == "reflect") return PadFill::reflect;
  throw ShapeError("unknown padding fill '" + std::string(s) + "' (expected zero, white or reflect)");
}

inline std::string_view pad_fill_name(PadFill f) {
  switch (f) {
    case PadFill::zero: return "zero";
    case PadFill::white: return "white";
    case PadFill::reflect: return "reflect";
  }
  return "?";
}

// Four shifted tilings of an image padded by `shift` (half a patch by
// default) on every side. Each original pixel lands in exactly one tile per
// offset.
struct OffsetScheme {
  std::size_t patch = 512;
  std::size_t shift = 0;  // 0 means patch / 2

  std::size_t pad() const { return shift ? shift : patch / 2; }

  std::array<PatchOrigin, 4> offsets() const { return {{{0, 0}, {pad(), 0}, {0, pad()}, {pad(), pad()}}}; }

  std::pair<std::size_t, std::size_t> padded_extent(std::size_t w, std::size_t h) const {
    return {w + 2 * pad(), h + 2 * pad()};
  }

  // Tile origins (padded-canvas coordinates) for one offset, row-major. Tiles
  // continue past the padded extent when it is not a multiple of the patch.
  std::vector<PatchOrigin> tiles(std::size_t w, std::size_t h, PatchOrigin offset) const {
    std::vector<PatchOrigin> out;
    for (std::size_t y = offset.y; y < pad() + h; y += patch)
      for (std::size_t x = offset.x; x < pad() + w; x += patch) out.push_back({x, y});
    return out;
  }
};

struct StitchOptions {
  std::size_t patch_size = 512;
  std::size_t offset = 0;  // 0 means patch_size / 2
  PadFill fill = PadFill::zero;
  std::size_t batch = 4;
  std::size_t threads = 1;
  bool sum_instead_of_mean = false;  // coverage diagnostics
};

// Worker threads: hardware concurrency, capped by ATRES_THREADS when set.
inline std::size_t default_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("ATRES_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
  }
  return n;
}

namespace detail {

inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Normalized [3, S, S] tile read from the padded canvas at `origin`.
inline void fill_tile(const ImageRGB& img, std::size_t pad, PadFill fill, PatchOrigin origin, std::size_t size,
                      float* dst) {
  const std::size_t plane = size * size;
  const float outside = fill == PadFill::white ? 1.0f : 0.0f;
  const auto w = static_cast<std::ptrdiff_t>(img.width);
  const auto h = static_cast<std::ptrdiff_t>(img.height);
  for (std::size_t ty = 0; ty < size; ++ty) {
    std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(origin.y + ty) - static_cast<std::ptrdiff_t>(pad);
    const bool row_in = sy >= 0 && sy < h;
    if (fill == PadFill::reflect) sy = reflect_index(sy, h);
    for (std::size_t tx = 0; tx < size; ++tx) {
      std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(origin.x + tx) - static_cast<std::ptrdiff_t>(pad);
      const bool in = row_in && sx >= 0 && sx < w;
      const std::size_t q = ty * size + tx;
      if (!in && fill != PadFill::reflect) {
        for (std::size_t c = 0; c < 3; ++c) dst[c * plane + q] = outside;
        continue;
      }
      if (fill == PadFill::reflect) sx = reflect_index(sx, w);
      const auto* px = img.at(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy));
      for (std::size_t c = 0; c < 3; ++c) dst[c * plane + q] = static_cast<float>(px[c]) / 255.0f;
    }
  }
}

}  // namespace detail

// Per-pixel number of tiles covering the original image.
inline std::vector<int> coverage_count(std::size_t w, std::size_t h, const OffsetScheme& scheme) {
  std::vector<int> count(w * h, 0);
  const std::size_t pad = scheme.pad();
  for (const auto& off : scheme.offsets())
    for (const auto& t : scheme.tiles(w, h, off))
      for (std::size_t y = std::max(t.y, pad); y < std::min(t.y + scheme.patch, pad + h); ++y)
        for (std::size_t x = std::max(t.x, pad); x < std::min(t.x + scheme.patch, pad + w); ++x)
          ++count[(y - pad) * w + (x - pad)];
  return count;
}

// Stitched prediction: pad the image by half a patch on all sides, predict
// non-overlapping tiles from each of the four offsets, crop every map back to
// the original extent and average. `predict_batch` maps [N,3,S,S] to
// [N,1,S,S] probabilities; it is called with up to `opt.batch` tiles at a time
// and must be safe to call from `workers` when more than one is given.
template <class BatchFn>
SegmentationMap predict_full_with(std::vector<BatchFn>& workers, const ImageRGB& img, const StitchOptions& opt) {
  img.validate();
  if (workers.empty()) throw ShapeError("predict_full: no predictor");
  if (opt.patch_size == 0 || opt.offset >= opt.patch_size) {
    throw ShapeError("predict_full: offset must be smaller than the patch size");
  }
  const OffsetScheme scheme{opt.patch_size, opt.offset};
  const std::size_t S = opt.patch_size;
  const std::size_t pad = scheme.pad();
  const std::size_t batch = std::max<std::size_t>(1, opt.batch);

  std::vector<PatchOrigin> jobs;
  for (const auto& off : scheme.offsets())
    for (const auto& t : scheme.tiles(img.width, img.height, off)) jobs.push_back(t);

  std::vector<double> acc(img.width * img.height, 0.0);
  const std::size_t wave = batch * workers.size();
  std::vector<Tensor> outputs(workers.size());
  for (std::size_t w0 = 0; w0 < jobs.size(); w0 += wave) {
    auto run = [&](std::size_t wi) {
      const std::size_t b0 = w0 + wi * batch;
      if (b0 >= jobs.size()) return;
      const std::size_t nb = std::min(batch, jobs.size() - b0);
      Tensor in({nb, 3, S, S});
      for (std::size_t i = 0; i < nb; ++i)
        detail::fill_tile(img, pad, opt.fill, jobs[b0 + i], S, in.mutable_data().data() + i * 3 * S * S);
      outputs[wi] = workers[wi](in);
      const auto& os = outputs[wi].shape();
      if (os.size() != 4 || os[0] != nb || os[1] != 1 || os[2] != S || os[3] != S) {
        throw ShapeError("predict_full: predictor returned " + shape_str(os));
      }
    };
    if (workers.size() == 1) {
      run(0);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(workers.size());
      for (std::size_t wi = 0; wi < workers.size(); ++wi)
        pool.emplace_back([&, wi] {
          try {
            run(wi);
          } catch (...) {
            errors[wi] = std::current_exception();
          }
        });
      for (auto& t : pool) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    // Sequential, job-ordered reduction.
    for (std::size_t wi = 0; wi < workers.size(); ++wi) {
      const std::size_t b0 = w0 + wi * batch;
      if (b0 >= jobs.size()) break;
      const std::size_t nb = std::min(batch, jobs.size() - b0);
      auto od = outputs[wi].data();
      for (std::size_t i = 0; i < nb; ++i) {
        const PatchOrigin t = jobs[b0 + i];
        for (std::size_t y = std::max(t.y, pad); y < std::min(t.y + S, pad + img.height); ++y)
          for (std::size_t x = std::max(t.x, pad); x < std::min(t.x + S, pad + img.width); ++x)
            acc[(y - pad) * img.width + (x - pad)] += od[i * S * S + (y - t.y) * S + (x - t.x)];
      }
    }
  }
  SegmentationMap map(img.width, img.height);
  const double div = opt.sum_instead_of_mean ? 1.0 : static_cast<double>(scheme.offsets().size());
  for (std::size_t i = 0; i < acc.size(); ++i) map.values[i] = static_cast<float>(acc[i] / div);
  return map;
}

template <class BatchFn>
SegmentationMap predict_full(BatchFn&& predict_batch, const ImageRGB& img, const StitchOptions& opt) {
  std::vector<std::decay_t<BatchFn>> workers{std::forward<BatchFn>(predict_batch)};
  return predict_full_with(workers, img, opt);
}

// Model overload; uses opt.threads model clones when more than one.
inline SegmentationMap predict_full(Model& model, const ImageRGB& img, const StitchOptions& opt) {
  if (model.training()) throw ShapeError("predict_full: model must be in eval mode");
  auto fn = [](Model* m) { return [m](const Tensor& x) { return m->predict(x); }; };
  if (opt.threads <= 1) {
    std::vector<decltype(fn(&model))> workers{fn(&model)};
    return predict_full_with(workers, img, opt);
  }
  std::vector<Model> clones;
  clones.reserve(opt.threads);
  for (std::size_t i = 0; i < opt.threads; ++i) clones.push_back(model.clone());
  std::vector<decltype(fn(&model))> workers;
  for (auto& c : clones) workers.push_back(fn(&c));
  return predict_full_with(workers, img, opt);
}

inline SegmentationMap transform_map(const SegmentationMap& m, GeoOp op) {
  SegmentationMap out(swaps_axes(op) ? m.height : m.width, swaps_axes(op) ? m.width : m.height, m.kind);
  geo_transform<float>(m.values, m.width, m.height, 1, true, op, out.values);
  return out;
}

inline void require_prob(const char* op, const SegmentationMap& m) {
  if (m.kind != SegmentationMap::Kind::prob) throw ShapeError(std::string(op) + ": expected a probability map");
}

// value >= t -> 1, else 0.
inline SegmentationMap threshold(const SegmentationMap& m, float t = 0.5f) {
  require_prob("threshold", m);
  if (!(t > 0.0f && t < 1.0f)) throw ShapeError("threshold: t = " + std::to_string(t) + " outside (0, 1)");
  SegmentationMap out(m.width, m.height, SegmentationMap::Kind::binary);
  for (std::size_t i = 0; i < m.values.size(); ++i) out.values[i] = m.values[i] >= t ? 1.0f : 0.0f;
  return out;
}

// Relabels a binary map as probabilities (values are already in [0, 1]).
inline SegmentationMap as_probability(SegmentationMap m) {
  m.kind = SegmentationMap::Kind::prob;
  return m;
}

// Pixelwise mean, summed left to right in double.
inline SegmentationMap model_ensemble(const std::vector<SegmentationMap>& maps) {
  if (maps.size() < 2) throw ShapeError("model_ensemble: need at least two maps");
  for (const auto& m : maps) {
    require_prob("model_ensemble", m);
    if (m.width != maps[0].width || m.height != maps[0].height) {
      throw ShapeError("model_ensemble: map dimensions differ (" + std::to_string(m.width) + "x" +
                       std::to_string(m.height) + " vs " + std::to_string(maps[0].width) + "x" +
                       std::to_string(maps[0].height) + ")");
    }
  }
  SegmentationMap out(maps[0].width, maps[0].height);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    double s = 0.0;
    for (const auto& m : maps) s += m.values[i];
    out.values[i] = static_cast<float>(s / static_cast<double>(maps.size()));
  }
  return out;
}

// Mean of stitched predictions over geometric transforms of the input, each
// mapped back to the original frame.
template <class Predict>
SegmentationMap self_ensemble_with(Predict&& predict_image, const ImageRGB& img,
                                   const std::vector<GeoOp>& transforms = {kAllGeoOps.begin(), kAllGeoOps.end()}) {
  if (transforms.empty()) throw ShapeError("self_ensemble: no transforms");
  std::vector<double> acc(img.width * img.height, 0.0);
  for (GeoOp op : transforms) {
    const SegmentationMap m = transform_map(predict_image(transform_image(img, op)), inverse(op));
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m.values[i];
  }
  SegmentationMap out(img.width, img.height);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    out.values[i] = static_cast<float>(acc[i] / static_cast<double>(transforms.size()));
  }
  return out;
}

inline SegmentationMap self_ensemble(Model& model, const ImageRGB& img, const StitchOptions& opt,
                                     const std::vector<GeoOp>& transforms = {kAllGeoOps.begin(), kAllGeoOps.end()}) {
  return self_ensemble_with([&](const ImageRGB& t) { return predict_full(model, t, opt); }, img, transforms);
}

}  // namespace atres
