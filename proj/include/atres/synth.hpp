#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "atres/error.hpp"
#include "atres/random.hpp"
#include "atres/training.hpp"

namespace atres {

// Toy H&E-like slides: pale background (every channel >= 230) with pink to
// purple tissue blobs stippled with dark nuclei. Larger blobs carry gland-like
// lumens: holes painted exactly like background, ringed by nuclei. The mask is
// the blob union, lumens included, so labelling a lumen needs the surrounding
// rim, not the pixel colour. Every tenth image is "sparse": a few small
// fragments, too little tissue for any 64-pixel patch to pass the filter.
struct SynthOptions {
  std::size_t size = 128;
  std::uint64_t seed = 0;
  std::size_t depth = 3;  // size must be divisible by 2^depth
};

inline bool synth_is_sparse(std::size_t index) { return index % 10 == 9; }

namespace detail {

struct Blob {
  double cx, cy, r;
  double amp[3], phase[3];  // radial wobble, harmonics 2..4

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double d = std::sqrt(dx * dx + dy * dy);
    if (d > r * 1.3) return false;
    const double th = std::atan2(dy, dx);
    double rr = r;
    for (int k = 0; k < 3; ++k) rr += r * amp[k] * std::sin((k + 2) * th + phase[k]);
    return d <= rr;
  }
};

inline Blob random_blob(Rng& rng, double size, double rmin, double rmax, double margin) {
  Blob b;
  b.r = rng.uniform(rmin, rmax);
  b.cx = rng.uniform(margin, size - margin);
  b.cy = rng.uniform(margin, size - margin);
  for (int k = 0; k < 3; ++k) {
    b.amp[k] = rng.uniform(0.0, 0.08);
    b.phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return b;
}

inline std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace detail

inline LabeledImage synth_image(std::size_t index, const SynthOptions& opt) {
  const std::size_t S = opt.size;
  if (S == 0 || S % (std::size_t{1} << opt.depth) != 0) {
    throw ShapeError("synth: size " + std::to_string(S) + " must be a positive multiple of " +
                     std::to_string(std::size_t{1} << opt.depth));
  }
  Rng rng = Rng(opt.seed).fork(index + 1);
  const double s = static_cast<double>(S);

  struct Lumen {
    double cx, cy, r;
  };
  std::vector<detail::Blob> blobs;
  std::vector<Lumen> lumens;
  if (synth_is_sparse(index)) {
    const int n = rng.range(2, 3);
    for (int i = 0; i < n; ++i) {
      auto b = detail::random_blob(rng, s, s / 40.0, s / 28.0, s / 10.0);
      for (auto& a : b.amp) a *= 0.5;
      blobs.push_back(b);
    }
  } else {
    const int n = rng.range(2, 4);
    for (int i = 0; i < n; ++i) {
      const auto b = detail::random_blob(rng, s, s * 0.15, s * 0.32, s * 0.2);
      blobs.push_back(b);
      // wobble keeps the boundary beyond 0.76 r, so d + lr <= 0.6 r stays enclosed
      for (int k = 0, nl = rng.range(0, 3); k < nl; ++k) {
        const double lr = b.r * rng.uniform(0.18, 0.32);
        const double d = rng.uniform(0.0, 0.6 * b.r - lr);
        const double th = rng.uniform(0.0, 2.0 * std::numbers::pi);
        lumens.push_back({b.cx + d * std::cos(th), b.cy + d * std::sin(th), lr});
      }
    }
  }

  LabeledImage out;
  char id[32];
  std::snprintf(id, sizeof id, "img_%03zu", index);
  out.id = id;
  out.image = ImageRGB(S, S);
  out.mask = BinaryMask(S, S);
  std::vector<int> owner(S * S, -1);  // blob index, -1 background
  std::vector<std::uint8_t> hole(S * S, 0);
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      for (std::size_t i = 0; i < blobs.size() && owner[y * S + x] < 0; ++i)
        if (blobs[i].contains(px, py)) owner[y * S + x] = static_cast<int>(i);
      for (const auto& l : lumens)
        if (std::hypot(px - l.cx, py - l.cy) <= l.r) hole[y * S + x] = 1;
      out.mask.values[y * S + x] = owner[y * S + x] >= 0;
    }

  std::vector<std::uint8_t> nucleus(S * S, 0);
  auto stamp = [&](double cx, double cy, double r) {
    const long x0 = std::max(0L, static_cast<long>(cx - r - 1)), x1 = std::min<long>(S - 1, static_cast<long>(cx + r + 1));
    const long y0 = std::max(0L, static_cast<long>(cy - r - 1)), y1 = std::min<long>(S - 1, static_cast<long>(cy + r + 1));
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const std::size_t q = static_cast<std::size_t>(y) * S + static_cast<std::size_t>(x);
        if (dx * dx + dy * dy <= r * r && owner[q] >= 0 && !hole[q]) nucleus[q] = 1;
      }
  };
  // per-blob stain and nuclear density
  std::vector<double> tint(blobs.size()), density(blobs.size());
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    tint[i] = rng.uniform(0.0, 1.0);
    density[i] = rng.uniform(1.0 / 90.0, 1.0 / 25.0);
  }
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    const auto& b = blobs[i];
    const int n = static_cast<int>(std::numbers::pi * b.r * b.r * density[i]);
    for (int k = 0; k < n; ++k) {
      const double cx = b.cx + rng.uniform(-1.3, 1.3) * b.r, cy = b.cy + rng.uniform(-1.3, 1.3) * b.r;
      if (b.contains(cx, cy)) stamp(cx, cy, rng.uniform(0.8, 1.8));
    }
  }
  for (const auto& l : lumens) {
    const int n = std::max(6, static_cast<int>(2.0 * std::numbers::pi * l.r / 3.0));
    const double rim = l.r + 2.0;
    for (int k = 0; k < n; ++k) {
      const double th = 2.0 * std::numbers::pi * (k + rng.uniform(-0.3, 0.3)) / n;
      stamp(l.cx + rim * std::cos(th), l.cy + rim * std::sin(th), rng.uniform(1.2, 1.8));
    }
  }

  const double bg[3] = {rng.uniform(238, 246), rng.uniform(234, 242), rng.uniform(238, 248)};
  const double pink[3] = {rng.uniform(215, 240), rng.uniform(140, 180), rng.uniform(180, 215)};
  const double purple[3] = {rng.uniform(150, 180), rng.uniform(100, 130), rng.uniform(180, 210)};
  const double dark[3] = {rng.uniform(70, 100), rng.uniform(30, 55), rng.uniform(100, 140)};

  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      const std::size_t q = y * S + x;
      std::uint8_t* p = out.image.at(x, y);
      const double noise = rng.uniform(-8.0, 8.0);
      if (owner[q] < 0 || hole[q]) {
        for (int c = 0; c < 3; ++c) p[c] = detail::clamp_u8(std::clamp(bg[c] + noise * 0.5, 230.0, 255.0));
        continue;
      }
      const double t = tint[static_cast<std::size_t>(owner[q])];
      for (int c = 0; c < 3; ++c) {
        const double v = nucleus[q] ? dark[c] : pink[c] + t * (purple[c] - pink[c]);
        p[c] = detail::clamp_u8(std::min(v + noise, 215.0));
      }
    }
  return out;
}

inline std::vector<LabeledImage> synth_dataset(std::size_t n, const SynthOptions& opt) {
  std::vector<LabeledImage> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_image(i, opt));
  return out;
}

}  // namespace atres
