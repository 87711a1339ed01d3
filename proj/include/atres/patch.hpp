#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "atres/random.hpp"
#include "atres/tensor.hpp"

namespace atres {

// 8-bit RGB, row-major, interleaved.
struct ImageRGB {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  ImageRGB() = default;
  ImageRGB(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h * 3, fill) {}

  std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + (y * width + x) * 3; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const { return pixels.data() + (y * width + x) * 3; }

  void validate() const {
    if (width == 0 || height == 0) throw ShapeError("image: extent must be at least 1x1");
    if (pixels.size() != width * height * 3) throw ShapeError("image: pixel buffer does not match width*height*3");
  }

  bool operator==(const ImageRGB&) const = default;
};

// Binary mask, one byte per pixel holding 0 or 1.
struct BinaryMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> values;

  BinaryMask() = default;
  BinaryMask(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), values(w * h, fill) {}

  std::uint8_t at(std::size_t x, std::size_t y) const { return values[y * width + x]; }

  bool operator==(const BinaryMask&) const = default;
};

inline constexpr int kDefaultWhiteLevel = 220;

// Background test: a pixel is background when every channel is at least
// `white_level`.
constexpr bool is_tissue(std::uint8_t r, std::uint8_t g, std::uint8_t b, int white_level = kDefaultWhiteLevel) {
  return !(r >= white_level && g >= white_level && b >= white_level);
}

struct PatchOrigin {
  std::size_t x = 0;
  std::size_t y = 0;
  bool operator==(const PatchOrigin&) const = default;
};

// Stride grid over a source extended on the right/bottom until every origin
// fits.
struct PatchPlan {
  std::size_t size = 0;
  std::size_t stride = 0;
  std::size_t source_width = 0;
  std::size_t source_height = 0;
  std::size_t padded_width = 0;
  std::size_t padded_height = 0;
  std::vector<PatchOrigin> origins;  // row-major
};

inline PatchPlan plan_grid(std::size_t width, std::size_t height, std::size_t size, std::size_t stride) {
  if (width == 0 || height == 0) throw ShapeError("plan_grid: image smaller than 1x1");
  if (size == 0 || stride == 0 || size % stride != 0) {
    throw ShapeError("plan_grid: stride " + std::to_string(stride) + " must divide patch size " + std::to_string(size));
  }
  auto extent = [&](std::size_t n) {
    const std::size_t rounded = (n + stride - 1) / stride * stride;
    return std::max(rounded, size);
  };
  PatchPlan plan;
  plan.size = size;
  plan.stride = stride;
  plan.source_width = width;
  plan.source_height = height;
  plan.padded_width = extent(width);
  plan.padded_height = extent(height);
  for (std::size_t y = 0; y + size <= plan.padded_height; y += stride)
    for (std::size_t x = 0; x + size <= plan.padded_width; x += stride) plan.origins.push_back({x, y});
  return plan;
}

struct Patch {
  PatchOrigin origin;
  std::size_t size = 0;
  Tensor data;                 // [3, S, S] in [0, 1]
  std::optional<Tensor> mask;  // [1, S, S] in {0, 1}
  double tissue_ratio = 0.0;
};

// Fraction of tissue pixels in the window; pixels outside the source count as
// background.
inline double tissue_ratio(const ImageRGB& img, PatchOrigin o, std::size_t size, int white_level = kDefaultWhiteLevel) {
  std::size_t count = 0;
  for (std::size_t y = o.y; y < std::min(o.y + size, img.height); ++y)
    for (std::size_t x = o.x; x < std::min(o.x + size, img.width); ++x) {
      const auto* p = img.at(x, y);
      count += is_tissue(p[0], p[1], p[2], white_level) ? 1 : 0;
    }
  return static_cast<double>(count) / static_cast<double>(size * size);
}

// Window copied out of the source with zero fill beyond its edges and scaled
// to [0, 1] by 1/255.
inline Patch cut_patch(const ImageRGB& img, const BinaryMask* mask, PatchOrigin o, std::size_t size,
                       int white_level = kDefaultWhiteLevel) {
  Patch p;
  p.origin = o;
  p.size = size;
  p.data = Tensor::zeros({3, size, size});
  auto d = p.data.mutable_data();
  const std::size_t plane = size * size;
  for (std::size_t y = o.y; y < std::min(o.y + size, img.height); ++y)
    for (std::size_t x = o.x; x < std::min(o.x + size, img.width); ++x) {
      const auto* px = img.at(x, y);
      const std::size_t q = (y - o.y) * size + (x - o.x);
      for (std::size_t c = 0; c < 3; ++c) d[c * plane + q] = static_cast<float>(px[c]) / 255.0f;
    }
  if (mask) {
    p.mask = Tensor::zeros({1, size, size});
    auto m = p.mask->mutable_data();
    for (std::size_t y = o.y; y < std::min(o.y + size, mask->height); ++y)
      for (std::size_t x = o.x; x < std::min(o.x + size, mask->width); ++x)
        m[(y - o.y) * size + (x - o.x)] = mask->at(x, y) ? 1.0f : 0.0f;
  }
  p.tissue_ratio = tissue_ratio(img, o, size, white_level);
  return p;
}

struct PatchOptions {
  std::size_t size = 512;
  std::size_t stride = 0;  // 0 means size / 2
  double min_tissue = 0.30;
  int white_level = kDefaultWhiteLevel;
};

// Half-overlapping grid; keeps patches whose tissue ratio reaches min_tissue.
inline std::vector<Patch> extract_training_patches(const ImageRGB& img, const BinaryMask& mask,
                                                   const PatchOptions& opt = {}) {
  img.validate();
  if (mask.width != img.width || mask.height != img.height) {
    throw ShapeError("extract_training_patches: mask is " + std::to_string(mask.width) + "x" +
                     std::to_string(mask.height) + ", image is " + std::to_string(img.width) + "x" +
                     std::to_string(img.height));
  }
  const std::size_t stride = opt.stride ? opt.stride : opt.size / 2;
  const PatchPlan plan = plan_grid(img.width, img.height, opt.size, stride);
  std::vector<Patch> out;
  for (const auto& o : plan.origins) {
    if (tissue_ratio(img, o, opt.size, opt.white_level) >= opt.min_tissue) {
      out.push_back(cut_patch(img, &mask, o, opt.size, opt.white_level));
    }
  }
  return out;
}

// Square-grid symmetries used for augmentation and self-ensembling. Rotations
// are counter-clockwise.
enum class GeoOp { identity, rot90, rot180, rot270, hflip, vflip };

inline constexpr std::array<GeoOp, 6> kAllGeoOps{GeoOp::identity, GeoOp::rot90,  GeoOp::rot180,
                                                 GeoOp::rot270,   GeoOp::hflip, GeoOp::vflip};

inline std::string_view geo_op_name(GeoOp op) {
  switch (op) {
    case GeoOp::identity: return "identity";
    case GeoOp::rot90: return "rot90";
    case GeoOp::rot180: return "rot180";
    case GeoOp::rot270: return "rot270";
    case GeoOp::hflip: return "hflip";
    case GeoOp::vflip: return "vflip";
  }
  return "?";
}

inline GeoOp parse_geo_op(std::string_view s) {
  for (auto op : kAllGeoOps)
    if (geo_op_name(op) == s) return op;
  throw ShapeError("unknown transform '" + std::string(s) + "'");
}

constexpr GeoOp inverse(GeoOp op) {
  if (op == GeoOp::rot90) return GeoOp::rot270;
  if (op == GeoOp::rot270) return GeoOp::rot90;
  return op;
}

constexpr bool swaps_axes(GeoOp op) { return op == GeoOp::rot90 || op == GeoOp::rot270; }

// Source coordinate read by output pixel (x, y) for a w x h source.
constexpr std::pair<std::size_t, std::size_t> geo_source(GeoOp op, std::size_t x, std::size_t y, std::size_t w,
                                                         std::size_t h) {
  switch (op) {
    case GeoOp::identity: return {x, y};
    case GeoOp::rot90: return {w - 1 - y, x};
    case GeoOp::rot180: return {w - 1 - x, h - 1 - y};
    case GeoOp::rot270: return {y, h - 1 - x};
    case GeoOp::hflip: return {w - 1 - x, y};
    case GeoOp::vflip: return {x, h - 1 - y};
  }
  return {x, y};
}

// Transforms a grid of `channels` values per pixel. `planar` selects CHW
// layout, otherwise HWC. Returns the output width and height.
template <class V>
std::pair<std::size_t, std::size_t> geo_transform(std::span<const V> src, std::size_t w, std::size_t h,
                                                  std::size_t channels, bool planar, GeoOp op, std::span<V> dst) {
  const std::size_t ow = swaps_axes(op) ? h : w;
  const std::size_t oh = swaps_axes(op) ? w : h;
  const std::size_t plane = w * h;
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      const auto [sx, sy] = geo_source(op, x, y, w, h);
      for (std::size_t c = 0; c < channels; ++c) {
        if (planar) {
          dst[c * plane + y * ow + x] = src[c * plane + sy * w + sx];
        } else {
          dst[(y * ow + x) * channels + c] = src[(sy * w + sx) * channels + c];
        }
      }
    }
  return {ow, oh};
}

inline ImageRGB transform_image(const ImageRGB& img, GeoOp op) {
  ImageRGB out(swaps_axes(op) ? img.height : img.width, swaps_axes(op) ? img.width : img.height);
  geo_transform<std::uint8_t>(img.pixels, img.width, img.height, 3, false, op, out.pixels);
  return out;
}

// [C, H, W] or [N, C, H, W]; transforms the two trailing axes.
template <class T>
BasicTensor<T> transform_tensor(const BasicTensor<T>& t, GeoOp op) {
  if (t.rank() < 2) throw ShapeError("transform_tensor: need at least 2 axes");
  Shape s = t.shape();
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::size_t planes = t.numel() / (h * w);
  if (swaps_axes(op)) std::swap(s[s.size() - 2], s[s.size() - 1]);
  BasicTensor<T> out(s);
  geo_transform<T>(t.data(), w, h, planes, true, op, out.mutable_data());
  return out;
}

inline Patch augment(const Patch& p, GeoOp op) {
  if (p.data.rank() != 3) throw ShapeError("augment: patch data must be [C, H, W]");
  if (swaps_axes(op) && p.data.dim(1) != p.data.dim(2)) {
    throw ShapeError("augment: " + std::string(geo_op_name(op)) + " needs a square patch, got " +
                     shape_str(p.data.shape()));
  }
  Patch out = p;
  out.data = transform_tensor(p.data, op);
  if (p.mask) out.mask = transform_tensor(*p.mask, op);
  return out;
}

inline GeoOp random_geo_op(Rng& rng) { return kAllGeoOps[rng.below(kAllGeoOps.size())]; }

}  // namespace atres
