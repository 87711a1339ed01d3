#include <gtest/gtest.h>

#include "atres/atres.hpp"

using namespace atres;

namespace {

SegmentationMap binary(std::size_t w, std::size_t h, std::vector<float> v) {
  SegmentationMap m(w, h, SegmentationMap::Kind::binary);
  m.values = std::move(v);
  return m;
}

SegmentationMap filled(std::size_t w, std::size_t h, float v) {
  return SegmentationMap(w, h, SegmentationMap::Kind::binary, v);
}

Tensor as_tensor(const SegmentationMap& m) {
  return Tensor({1, 1, m.height, m.width}, m.values);
}

}  // namespace

TEST(Confusion, AllOnes) {
  const ConfusionCounts c = confusion(filled(10, 10, 1), filled(10, 10, 1));
  EXPECT_EQ(c, (ConfusionCounts{100, 0, 0, 0}));
  EXPECT_EQ(*dice_from_counts(c), 1.0);
  EXPECT_EQ(*accuracy(c), 1.0);
}

TEST(Confusion, AllFalsePositives) {
  const ConfusionCounts c = confusion(filled(10, 10, 1), filled(10, 10, 0));
  EXPECT_EQ(c.fp, 100u);
  EXPECT_EQ(*dice_from_counts(c), 0.0);
  EXPECT_FALSE(sensitivity(c).has_value());
  EXPECT_EQ(*specificity(c), 0.0);
}

TEST(Confusion, CheckerboardAgainstInverse) {
  std::vector<float> a(16), b(16);
  for (std::size_t i = 0; i < 16; ++i) {
    a[i] = static_cast<float>((i / 4 + i % 4) % 2);
    b[i] = 1.0f - a[i];
  }
  const ConfusionCounts c = confusion(binary(4, 4, a), binary(4, 4, b));
  EXPECT_EQ(c.fp, 8u);
  EXPECT_EQ(c.fn, 8u);
  EXPECT_EQ(c.tp + c.tn, 0u);
}

TEST(Confusion, OneOfEach) {
  const ConfusionCounts c{1, 1, 1, 1};
  const MetricSummary s = summarize(c);
  EXPECT_DOUBLE_EQ(*s.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(*s.dice, 0.5);
  EXPECT_DOUBLE_EQ(*s.sensitivity, 0.5);
  EXPECT_DOUBLE_EQ(*s.specificity, 0.5);
  const ConfusionCounts cm = confusion(binary(2, 2, {1, 1, 0, 0}), binary(2, 2, {1, 0, 1, 0}));
  EXPECT_EQ(cm, c);
}

TEST(Confusion, UndefinedMetricsAreEmpty) {
  const ConfusionCounts c = confusion(filled(3, 3, 0), filled(3, 3, 0));
  EXPECT_FALSE(dice_from_counts(c).has_value());
  EXPECT_FALSE(sensitivity(c).has_value());
  EXPECT_EQ(*specificity(c), 1.0);
  EXPECT_FALSE(accuracy(ConfusionCounts{}).has_value());
}

TEST(Confusion, SwappingClassesExchangesSensitivityAndSpecificity) {
  const ConfusionCounts c{7, 3, 11, 2};
  EXPECT_EQ(sensitivity(c.swapped()), specificity(c));
  EXPECT_EQ(specificity(c.swapped()), sensitivity(c));
  EXPECT_EQ(c.swapped().swapped(), c);
  EXPECT_EQ(accuracy(c.swapped()), accuracy(c));
}

TEST(Confusion, RejectsMismatchAndProbabilities) {
  EXPECT_THROW(confusion(filled(3, 3, 0), filled(3, 4, 0)), ShapeError);
  EXPECT_THROW(confusion(SegmentationMap(3, 3), filled(3, 3, 0)), ShapeError);
}

TEST(Dice, CountsAgreeWithSetFormulation) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t w = 1 + rng.below(20), h = 1 + rng.below(20);
    SegmentationMap p = filled(w, h, 0), t = filled(w, h, 0);
    for (auto& v : p.values) v = static_cast<float>(rng.below(2));
    for (auto& v : t.values) v = static_cast<float>(rng.below(2));
    const auto d = dice_from_counts(confusion(p, t));
    if (!d) continue;
    EXPECT_NEAR(*d, dice_coefficient(as_tensor(p), as_tensor(t), 0.0), 1e-9);
  }
}

TEST(MacroAverage, SkipsUndefined) {
  const MacroMetric m = macro_average({0.5, std::nullopt, 1.0});
  EXPECT_DOUBLE_EQ(*m.mean, 0.75);
  EXPECT_EQ(m.defined, 2u);
  EXPECT_EQ(m.undefined, 1u);
  EXPECT_FALSE(macro_average({std::nullopt}).mean.has_value());
  EXPECT_FALSE(macro_average({}).mean.has_value());
}

TEST(MacroAverage, DiffersFromPooled) {
  // small image with a miss, large perfect image
  ConfusionCounts a{0, 1, 0, 1}, b{98, 0, 0, 0};
  const double macro = *macro_average({dice_from_counts(a), dice_from_counts(b)}).mean;
  ConfusionCounts pooled = a;
  pooled += b;
  EXPECT_DOUBLE_EQ(macro, 0.5);
  EXPECT_GT(*dice_from_counts(pooled), 0.98);
}
