#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "atres/atres.hpp"
#include "oracle.hpp"

using namespace atres;

TEST(DiceLoss, WorkedExamples) {
  const Tensor a({4}, std::vector<float>{1, 1, 0, 0});
  const Tensor b({4}, std::vector<float>{1, 0, 1, 0});
  EXPECT_DOUBLE_EQ(dice_coefficient(a, b, 0.0), 0.5);
  const Tensor half = Tensor::full({4}, 0.5f);
  EXPECT_DOUBLE_EQ(dice_coefficient(half, a, 0.0), 0.5);
  EXPECT_DOUBLE_EQ(dice_coefficient(a, a, 0.0), 1.0);
  const Tensor na({4}, std::vector<float>{0, 0, 1, 1});
  EXPECT_DOUBLE_EQ(dice_coefficient(a, na, 0.0), 0.0);
  EXPECT_NEAR(dice_loss(a, b, 0.0).item(), 0.5, 1e-7);
}

TEST(DiceLoss, SmoothingLimits) {
  const Tensor z = Tensor::zeros({8});
  EXPECT_DOUBLE_EQ(dice_coefficient(z, z, 1.0), 1.0);
  EXPECT_THROW(dice_loss(z, z, 0.0), NumericalError);
  const Tensor a({4}, std::vector<float>{1, 1, 0, 0});
  const Tensor na({4}, std::vector<float>{0, 0, 1, 1});
  EXPECT_NEAR(dice_coefficient(a, na, 1e-12), 0.0, 1e-12);
  EXPECT_NEAR(dice_coefficient(a, a, 1e-12), 1.0, 1e-12);
}

TEST(DiceLoss, SymmetricAndBounded) {
  Rng rng(3);
  auto binary = [&] {
    Tensor t({1, 1, 6, 6});
    for (auto& v : t.mutable_data()) v = static_cast<float>(rng.below(2));
    t.mutable_data()[0] = 1.0f;
    return t;
  };
  for (int i = 0; i < 50; ++i) {
    const Tensor a = binary(), b = binary();
    EXPECT_EQ(dice_coefficient(a, b, 0.0), dice_coefficient(b, a, 0.0));
    const Tensor p = Tensor::uniform({1, 1, 6, 6}, rng, 0, 1);
    const double dc = dice_coefficient(p, a, 1.0);
    EXPECT_GT(dc, 0.0);
    EXPECT_LE(dc, 1.0);
    const double l = dice_loss(p, a).item();
    EXPECT_GE(l, 0.0);
    EXPECT_LT(l, 1.0);
  }
  EXPECT_THROW(dice_loss(Tensor({4}), Tensor({5})), ShapeError);
  EXPECT_THROW(dice_loss(Tensor({2}), Tensor::full({2}, 0.5f)), ShapeError);
}

TEST(DiceLoss, GradientMatchesFiniteDifference) {
  Rng rng(5);
  DTensor p = DTensor::uniform({1, 1, 8, 8}, rng, 0.05, 0.95).set_requires_grad();
  DTensor t = DTensor::uniform({1, 1, 8, 8}, rng, 0, 1);
  for (auto& v : t.mutable_data()) v = v > 0.5 ? 1.0 : 0.0;
  backward(dice_loss(p, t, 1.0));
  const std::vector<double> analytic(p.grad().begin(), p.grad().end());
  std::vector<double> x(p.data().begin(), p.data().end());
  const auto f = [&](const std::vector<double>& v) {
    return dice_loss(DTensor({1, 1, 8, 8}, v), t, 1.0).item();
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double num = oracle::central_difference(f, x, i, 1e-6);
    EXPECT_NEAR(analytic[i], num, 1e-7 + 1e-5 * std::abs(num)) << i;
  }
}

TEST(Adam, ZeroGradientLeavesParametersAlone) {
  Tensor w = Tensor::full({3}, 2.0f).set_requires_grad();
  backward(sum(mul(w, Tensor::zeros({3}))));
  std::vector<Tensor> ps{w};
  AdamState st;
  adam_step(ps, st, 1e-3);
  for (float v : w.data()) EXPECT_EQ(v, 2.0f);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor w = Tensor::full({2}, 1.0f).set_requires_grad();
  backward(sum(w));
  std::vector<Tensor> ps{w};
  AdamState st;
  adam_step(ps, st, 1e-3);
  for (float v : w.data()) EXPECT_NEAR(v, 1.0f - 1e-3f, 1e-7);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ZeroLearningRateIsNoOp) {
  Tensor w = Tensor::full({2}, 1.0f).set_requires_grad();
  backward(sum(w));
  std::vector<Tensor> ps{w};
  AdamState st;
  adam_step(ps, st, 0.0);
  for (float v : w.data()) EXPECT_EQ(v, 1.0f);
  EXPECT_THROW(adam_step(ps, st, -1.0), ShapeError);
}

TEST(Adam, NonFiniteGradientThrows) {
  Tensor w = Tensor::full({2}, 1.0f).set_requires_grad();
  backward(sum(w));
  w.mutable_grad()[0] = std::nanf("");
  std::vector<Tensor> ps{w};
  AdamState st;
  EXPECT_THROW(adam_step(ps, st, 1e-3), NumericalError);
}

TEST(Cosine, EndpointsAndMonotone) {
  const CosineSchedule s{1e-3, 1000};
  EXPECT_DOUBLE_EQ(s.lr(0), 1e-3);
  EXPECT_LT(s.lr(999), 1e-5);
  EXPECT_NEAR(s.lr(500), 5e-4, 1e-12);
  for (std::size_t t = 1; t < 1000; ++t) EXPECT_LE(s.lr(t), s.lr(t - 1));
}

TEST(Split, FortyImages) {
  const DatasetSplit s = split_dataset(40, 0);
  EXPECT_EQ(s.train.size(), 30u);
  EXPECT_EQ(s.val.size(), 6u);
  EXPECT_EQ(s.test.size(), 4u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 40u);
  EXPECT_EQ(*all.rbegin(), 39u);
  EXPECT_EQ(split_dataset(40, 0).test, s.test);
  EXPECT_NE(split_dataset(40, 1).train, s.train);
}

TEST(Train, EmptyAfterFilterNamesThreshold) {
  LabeledImage li{"blank", ImageRGB(64, 64, 255), BinaryMask(64, 64)};
  TrainOptions opt;
  opt.model.patch_size = 32;
  opt.epochs = 1;
  try {
    train(opt, {li, li, li, li});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("30%"), std::string::npos) << e.what();
  }
  EXPECT_THROW(train(opt, {}), DataError);
}

namespace {

TrainOptions tiny_options() {
  TrainOptions opt;
  opt.model.variant = Variant::unet;
  opt.model.base_width = 4;
  opt.model.patch_size = 32;
  opt.patches.stride = 32;
  opt.epochs = 2;
  opt.seed = 9;
  return opt;
}

}  // namespace

TEST(Train, SameSeedSameHistory) {
  const auto data = synth_dataset(8, {64, 3});
  const TrainOptions opt = tiny_options();
  TrainResult a = train(opt, data), b = train(opt, data);
  ASSERT_EQ(a.history.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    EXPECT_EQ(a.history[i].val_dice, b.history[i].val_dice);
    EXPECT_EQ(a.history[i].lr, b.history[i].lr);
  }
  auto pa = a.last.named_parameters(), pb = b.last.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    ASSERT_TRUE(std::equal(pa[i].second.data().begin(), pa[i].second.data().end(), pb[i].second.data().begin()));
}

TEST(Train, OverfitsSingleSample) {
  const LabeledImage li = synth_image(0, {64, 1});
  const Patch p = cut_patch(li.image, &li.mask, {0, 0}, 64);
  const Tensor x = p.data.reshape({1, 3, 64, 64});
  const Tensor y = p.mask->reshape({1, 1, 64, 64});
  ModelConfig c;
  c.variant = Variant::atresunet;
  c.patch_size = 64;
  Model m(c);
  std::vector<Tensor> params;
  m.visit_parameters([&](const std::string&, Tensor& t) { params.push_back(t); });
  AdamState st;
  double dice = 0.0;
  int step = 0;
  // training Dice: train-mode forward, as logged by the trainer
  for (; step < 200 && dice <= 0.99; ++step) {
    m.zero_grad();
    const Tensor loss = dice_loss(m.forward(x), y);
    dice = 1.0 - loss.item();
    backward(loss);
    adam_step(params, st, 3e-3);
  }
  EXPECT_GT(dice, 0.99) << "after " << step << " steps";
}
