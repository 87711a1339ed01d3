#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "atres/stitch.hpp"

namespace atres {

// Pixel confusion counts; positive = tumour (1).
struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }

  // Same pixels with the classes swapped.
  ConfusionCounts swapped() const { return {tn, fn, tp, fp}; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }

  bool operator==(const ConfusionCounts&) const = default;
};

inline ConfusionCounts confusion(const SegmentationMap& pred, const SegmentationMap& truth) {
  if (pred.kind != SegmentationMap::Kind::binary || truth.kind != SegmentationMap::Kind::binary) {
    throw ShapeError("confusion: both maps must be binary");
  }
  if (pred.width != truth.width || pred.height != truth.height) {
    throw ShapeError("confusion: prediction is " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                     ", truth is " + std::to_string(truth.width) + "x" + std::to_string(truth.height));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool p = pred.values[i] != 0.0f;
    const bool t = truth.values[i] != 0.0f;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// Each metric is nullopt when its denominator is zero.
namespace detail {
inline std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace detail

inline std::optional<double> accuracy(const ConfusionCounts& c) { return detail::ratio(c.tp + c.tn, c.total()); }
inline std::optional<double> sensitivity(const ConfusionCounts& c) { return detail::ratio(c.tp, c.tp + c.fn); }
inline std::optional<double> specificity(const ConfusionCounts& c) { return detail::ratio(c.tn, c.tn + c.fp); }
inline std::optional<double> dice_from_counts(const ConfusionCounts& c) {
  return detail::ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
}

struct MetricSummary {
  std::optional<double> accuracy, dice, sensitivity, specificity;
};

inline MetricSummary summarize(const ConfusionCounts& c) {
  return {accuracy(c), dice_from_counts(c), sensitivity(c), specificity(c)};
}

// Unweighted mean over images of each metric, skipping images where the
// metric is undefined. `defined` counts the contributing images.
struct MacroMetric {
  std::optional<double> mean;
  std::size_t defined = 0;
  std::size_t undefined = 0;
};

inline MacroMetric macro_average(const std::vector<std::optional<double>>& values) {
  MacroMetric m;
  double s = 0.0;
  for (const auto& v : values) {
    if (v) {
      s += *v;
      ++m.defined;
    } else {
      ++m.undefined;
    }
  }
  if (m.defined) m.mean = s / static_cast<double>(m.defined);
  return m;
}

}  // namespace atres
