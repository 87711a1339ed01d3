#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "atres/atres.hpp"

using namespace atres;

namespace {

void zero_sacu(Sacu<float>& u) {
  u.visit_parameters("sacu", [](const std::string& name, Tensor& t) {
    if (name.ends_with(".bn.gamma")) return;
    for (auto& v : t.mutable_data()) v = 0.0f;
  });
}

ModelConfig small(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.patch_size = 64;
  return c;
}

std::vector<std::string> trace_of(Variant v) {
  Model m(small(v));
  std::vector<std::string> trace;
  Rng rng(0);
  m.eval();
  m.forward(Tensor::uniform({1, 3, 64, 64}, rng, 0, 1), &trace);
  return trace;
}

std::vector<std::string> without(std::vector<std::string> v, std::initializer_list<const char*> suffixes) {
  std::erase_if(v, [&](const std::string& s) {
    return std::any_of(suffixes.begin(), suffixes.end(), [&](const char* x) { return s.ends_with(x); });
  });
  return v;
}

std::set<std::string> param_names(Variant v) {
  Model m(small(v));
  std::set<std::string> out;
  for (auto& [n, t] : m.named_parameters()) out.insert(n);
  return out;
}

}  // namespace

TEST(Sacu, ReceptiveFieldOfDefaultScheduleIs127) {
  EXPECT_EQ(SacuConfig{4}.receptive_field(), 127u);
  EXPECT_EQ((SacuConfig{4, {1}}).receptive_field(), 3u);
}

TEST(Sacu, ZeroWeightsGiveIdentity) {
  Rng rng(1);
  for (bool training : {true, false}) {
    Sacu<float> u(SacuConfig{3}, rng);
    zero_sacu(u);
    const Tensor x = Tensor::randn({2, 3, 40, 40}, rng);
    const Tensor y = u.forward(x, training);
    EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  }
}

TEST(Sacu, SingleStepScheduleZeroWeightsIdentity) {
  Rng rng(2);
  Sacu<float> u(SacuConfig{2, {1}}, rng);
  zero_sacu(u);
  const Tensor x = Tensor::randn({1, 2, 5, 5}, rng);
  const Tensor y = u.forward(x, true);
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}

TEST(Sacu, ShapePreservedAndChannelChecked) {
  Rng rng(3);
  Sacu<float> u(SacuConfig{4}, rng);
  const Tensor y = u.forward(Tensor::randn({1, 4, 16, 24}, rng), true);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 16, 24}));
  EXPECT_THROW(u.forward(Tensor({1, 3, 16, 16}), true), ShapeError);
}

TEST(Sacu, GradientSparsityMatchesReceptiveField) {
  Rng rng(4);
  Sacu<float> u(SacuConfig{1}, rng);
  u.visit_parameters("sacu", [](const std::string& name, Tensor& t) {
    const float v = name.ends_with(".weight") || name.ends_with(".gamma") ? 1.0f : 0.0f;
    for (auto& x : t.mutable_data()) x = v;
  });
  const std::size_t S = 150, c = 75;
  Tensor x = Tensor::uniform({1, 1, S, S}, rng, 0.5, 1.0).set_requires_grad();
  const Tensor y = u.forward(x, false);
  Tensor pick({1, 1, S, S});
  pick.mutable_data()[c * S + c] = 1.0f;
  backward(weighted_sum(y, pick));
  for (std::size_t r = 0; r < S; ++r)
    for (std::size_t q = 0; q < S; ++q) {
      const std::size_t cheb = std::max(r > c ? r - c : c - r, q > c ? q - c : c - q);
      const float g = x.grad()[r * S + q];
      if (cheb <= 63) ASSERT_GT(g, 0.0f) << r << "," << q;
      else ASSERT_EQ(g, 0.0f) << r << "," << q;
    }
}

TEST(Model, UnetShapeAndRange) {
  Model m(small(Variant::unet));
  Rng rng(0);
  const Tensor y = m.forward(Tensor::uniform({1, 3, 64, 64}, rng, 0, 1));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 64, 64}));
  for (float v : y.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Model, EveryVariantMapsToOneChannelProbabilities) {
  Rng rng(1);
  for (Variant v : {Variant::unet, Variant::resunet, Variant::atresunet}) {
    Model m(small(v));
    const Tensor y = m.forward(Tensor::randn({2, 3, 32, 48}, rng, 3.0));
    EXPECT_EQ(y.shape(), (Shape{2, 1, 32, 48}));
    EXPECT_GE(*std::min_element(y.data().begin(), y.data().end()), 0.0f);
    EXPECT_LE(*std::max_element(y.data().begin(), y.data().end()), 1.0f);
  }
}

TEST(Model, GoldenParameterCounts) {
  EXPECT_EQ(Model(small(Variant::unet)).parameter_count(), 134617u);
  EXPECT_EQ(Model(small(Variant::resunet)).parameter_count(), 134617u);
  EXPECT_EQ(Model(small(Variant::atresunet)).parameter_count(), 511081u);
}

TEST(Model, ParameterCountIsPureFunctionOfConfig) {
  ModelConfig a = small(Variant::atresunet), b = a;
  b.init_seed = 99;
  EXPECT_EQ(Model(a).parameter_count(), Model(b).parameter_count());
}

TEST(Model, VariantNestingByTrace) {
  const auto atres = trace_of(Variant::atresunet);
  const auto res = trace_of(Variant::resunet);
  const auto unet = trace_of(Variant::unet);
  EXPECT_NE(atres, res);
  EXPECT_EQ(without(atres, {".sacu", ".reduce"}), res);
  EXPECT_EQ(without(res, {".residual_add"}), unet);
  // one SACU per level: 3 encoder, bottleneck, 3 decoder
  EXPECT_EQ(std::count_if(atres.begin(), atres.end(), [](const auto& s) { return s.ends_with(".sacu"); }), 7);
}

TEST(Model, VariantNestingByParameterNames) {
  const auto atres = param_names(Variant::atresunet);
  const auto res = param_names(Variant::resunet);
  EXPECT_EQ(res, param_names(Variant::unet));
  std::vector<std::string> extra;
  std::set_difference(atres.begin(), atres.end(), res.begin(), res.end(), std::back_inserter(extra));
  EXPECT_TRUE(std::includes(atres.begin(), atres.end(), res.begin(), res.end()));
  ASSERT_FALSE(extra.empty());
  for (const auto& n : extra) EXPECT_TRUE(n.find(".sacu.") != std::string::npos || n.find(".reduce.") != std::string::npos) << n;
}

TEST(Model, StableParameterOrder) {
  Model m(small(Variant::atresunet));
  const auto p = m.named_parameters();
  EXPECT_EQ(p.front().first, "enc0.conv_a.weight");
  EXPECT_EQ(p.back().first, "head.bias");
  std::vector<std::string> a, b;
  for (auto& x : p) a.push_back(x.first);
  for (auto& x : Model(small(Variant::atresunet)).named_parameters()) b.push_back(x.first);
  EXPECT_EQ(a, b);
  for (auto& [n, t] : p)
    if (n.ends_with(".weight") && n.find(".sacu.") == std::string::npos && n.find("head") == std::string::npos &&
        n.find(".reduce.") == std::string::npos && n.find(".bn.") == std::string::npos) {
      EXPECT_EQ(t.dim(2), 3u) << n;
    }
}

TEST(Model, EvalForwardIsDeterministic) {
  Model m(small(Variant::atresunet));
  m.eval();
  Rng rng(2);
  const Tensor x = Tensor::uniform({1, 3, 64, 64}, rng, 0, 1);
  const Tensor a = m.forward(x), b = m.forward(x);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(Model, TrainForwardDependsOnDropoutSeed) {
  Model m(small(Variant::unet));
  Rng rng(3);
  const Tensor x = Tensor::uniform({2, 3, 32, 32}, rng, 0, 1);
  Model a = m.clone(), b = m.clone();
  a.set_dropout_seed(1);
  b.set_dropout_seed(2);
  const Tensor ya = a.forward(x), yb = b.forward(x);
  EXPECT_FALSE(std::equal(ya.data().begin(), ya.data().end(), yb.data().begin()));
}

TEST(Model, SameSeedSameWeights) {
  Model a(small(Variant::atresunet)), b(small(Variant::atresunet));
  auto pa = a.named_parameters(), pb = b.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_TRUE(std::equal(pa[i].second.data().begin(), pa[i].second.data().end(), pb[i].second.data().begin()));
}

TEST(Model, InvalidConfigAndInputsThrow) {
  ModelConfig c = small(Variant::unet);
  c.patch_size = 60;
  EXPECT_THROW(Model{c}, ShapeError);
  Model m(small(Variant::unet));
  EXPECT_THROW(m.forward(Tensor({1, 4, 64, 64})), ShapeError);
  EXPECT_THROW(m.forward(Tensor({1, 3, 36, 36})), ShapeError);
  EXPECT_THROW(parse_variant("fcn"), ShapeError);
}

TEST(Model, BottleneckIsOneEighth) {
  Model m(small(Variant::unet));
  EXPECT_EQ(m.config().divisor(), 8u);
  EXPECT_EQ(m.config().width(3), 64u);
}

TEST(Model, CloneIsIndependent) {
  Model m(small(Variant::unet));
  Model c = m.clone();
  c.head().params.bias.mutable_data()[0] += 1.0f;
  EXPECT_NE(m.head().params.bias.data()[0], c.head().params.bias.data()[0]);
}
