#include <gtest/gtest.h>

#include <cmath>

#include "pdd/dm.hpp"
#include "test_util.hpp"

namespace pdd {
namespace {

using testing::random_tensor;

ModelSpec block8x8(std::size_t depth = 1) {
  return {.architecture = Architecture::ConvNet, .channels = 2, .height = 8, .width = 8, .classes = 2, .hidden = 3,
          .depth = depth};
}

TEST(Embedding, DeterministicPerSeed) {
  const Var x = Var::constant(random_tensor({3, 2, 8, 8}, 1));
  const Tensor a = sample_embedding(block8x8(2), 5).embed(x).value();
  const Tensor b = sample_embedding(block8x8(2), 5).embed(x).value();
  const Tensor c = sample_embedding(block8x8(2), 6).embed(x).value();
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
  EXPECT_EQ(a.shape(), (Shape{3, block8x8(2).feature_size()}));
  const Tensor other = sample_embedding(block8x8(2), 5).embed(Var::constant(random_tensor({3, 2, 8, 8}, 2))).value();
  EXPECT_EQ(other.shape(), a.shape());
}

TEST(AugmentPolicy, ParsesKnownNames) {
  const auto p = AugmentPolicy::parse("flip,translate,color");
  EXPECT_TRUE(p.flip && p.translate && p.color);
  EXPECT_FALSE(p.scale || p.rotate || p.cutout);
  EXPECT_EQ(p.to_string(), "flip,translate,color");
  EXPECT_TRUE(AugmentPolicy::parse("").empty());
  EXPECT_TRUE(AugmentPolicy::parse("none").empty());
  EXPECT_THROW(AugmentPolicy::parse("flip,blur"), Error);
}

TEST(Augment, FlipIsAnInvolution) {
  const Tensor x = random_tensor({2, 3, 5, 6}, 3);
  AugSample w = AugSample::identity(5, 6);
  w.flip = true;
  const Var once = augment(Var::constant(x), w);
  EXPECT_FALSE(once.value() == x);
  EXPECT_EQ(once.value()[0], x[5]);  // first row mirrored
  EXPECT_EQ(augment(once, w).value(), x);
}

TEST(Augment, ZeroTranslationIsIdentity) {
  const Tensor x = random_tensor({2, 1, 6, 6}, 4);
  AugSample w = AugSample::identity(6, 6);
  w.policy.translate = true;
  EXPECT_EQ(augment(Var::constant(x), w).value(), x);
}

TEST(Augment, TranslationZeroPads) {
  std::vector<double> v(16);
  for (std::size_t i = 0; i < 16; ++i) v[i] = static_cast<double>(i + 1);
  AugSample w = AugSample::identity(4, 4);
  w.shift_x = 1;
  const Tensor out = augment(Var::constant(Tensor({1, 1, 4, 4}, v)), w).value();
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 1.0);
  EXPECT_EQ(out[3], 3.0);
}

TEST(Augment, PreservesShapeAndIsDeterministic) {
  const auto policy = AugmentPolicy::parse("flip,translate,scale,rotate,color,cutout");
  const Tensor x = random_tensor({3, 3, 8, 8}, 5);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng a(seed), b(seed);
    const AugSample wa = sample_augmentation(policy, a, 8, 8);
    const AugSample wb = sample_augmentation(policy, b, 8, 8);
    const Tensor out = augment(Var::constant(x), wa).value();
    EXPECT_EQ(out.shape(), x.shape());
    EXPECT_EQ(out, augment(Var::constant(x), wb).value());
    EXPECT_TRUE(out.all_finite());
  }
}

TEST(Augment, DrawsStayInDeclaredRanges) {
  const auto policy = AugmentPolicy::parse("flip,translate,scale,rotate,color,cutout");
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const AugSample w = sample_augmentation(policy, rng, 32, 32);
    EXPECT_LE(std::abs(w.shift_x), 4);
    EXPECT_LE(std::abs(w.shift_y), 4);
    EXPECT_GE(w.scale_x, 0.8);
    EXPECT_LE(w.scale_x, 1.2);
    EXPECT_LE(std::abs(w.angle), 15.0 * 3.14159265358979 / 180.0 + 1e-12);
    EXPECT_LE(std::abs(w.brightness), 0.25);
    EXPECT_LE(w.cut_bottom - w.cut_top, 16u);
    EXPECT_LE(w.cut_right - w.cut_left, 16u);
  }
}

TEST(Augment, ScaleGradientMatchesFiniteDifferences) {
  AugSample w = AugSample::identity(6, 6);
  w.scale_y = 1.1;
  w.scale_x = 1.1;
  const Tensor weights = random_tensor({2, 1, 6, 6}, 7);
  const double err = finite_difference_check(
      [&](const Var& x) { return sum(mul(augment(x, w), Var::constant(weights))); }, random_tensor({2, 1, 6, 6}, 8),
      1e-5);
  EXPECT_LE(err, 1e-4);
}

TEST(Augment, ColorAndRotationGradientsMatchFiniteDifferences) {
  AugSample w = AugSample::identity(6, 6);
  w.angle = 0.2;
  w.brightness = 0.1;
  w.saturation = 1.2;
  w.contrast = 0.9;
  w.cut_top = 1;
  w.cut_bottom = 3;
  w.cut_left = 2;
  w.cut_right = 5;
  const Tensor weights = random_tensor({2, 3, 6, 6}, 9);
  const double err = finite_difference_check(
      [&](const Var& x) { return sum(mul(augment(x, w), Var::constant(weights))); }, random_tensor({2, 3, 6, 6}, 10),
      1e-5);
  EXPECT_LE(err, 1e-4);
}

TEST(DmLoss, IdenticalSetsMatchExactly) {
  const auto emb = sample_embedding(block8x8(2), 11);
  const std::vector<Tensor> real{random_tensor({4, 2, 8, 8}, 12), random_tensor({3, 2, 8, 8}, 13)};
  const std::vector<Var> synth{Var::constant(real[0]), Var::constant(real[1])};
  Rng rng(14);
  const auto policy = AugmentPolicy::parse("flip,translate,scale,rotate,color,cutout");
  const std::vector<AugSample> omega{sample_augmentation(policy, rng, 8, 8), sample_augmentation(policy, rng, 8, 8)};
  EXPECT_EQ(dm_loss(real, synth, emb, omega).value().item(), 0.0);
  EXPECT_EQ(dm_loss(real, synth, emb, {}).value().item(), 0.0);
}

TEST(DmLoss, IdentityEmbeddingScalarCase) {
  const auto emb = EmbeddingNet::flatten({1, 1, 1});
  const std::vector<Tensor> real{Tensor({1, 1, 1, 1}, {2.0})};
  const std::vector<Var> synth{Var::constant(Tensor({1, 1, 1, 1}, {0.0}))};
  EXPECT_EQ(dm_loss(real, synth, emb, {}).value().item(), 4.0);
}

TEST(DmLoss, InvariantToOrderWithinClass) {
  const auto emb = sample_embedding(block8x8(), 15);
  const Tensor r = random_tensor({4, 2, 8, 8}, 16);
  const Tensor s = random_tensor({3, 2, 8, 8}, 17);
  const std::vector<Tensor> r_rev_rows{r.rows(3, 1), r.rows(1, 1), r.rows(0, 1), r.rows(2, 1)};
  const std::vector<Tensor> s_rev_rows{s.rows(2, 1), s.rows(0, 1), s.rows(1, 1)};
  const double a = dm_loss(std::vector<Tensor>{r}, std::vector<Var>{Var::constant(s)}, emb, {}).value().item();
  const double b = dm_loss(std::vector<Tensor>{stack_rows(r_rev_rows)},
                           std::vector<Var>{Var::constant(stack_rows(s_rev_rows))}, emb, {})
                       .value()
                       .item();
  EXPECT_GT(a, 0.0);
  EXPECT_NEAR(a, b, 1e-12 * a);
}

TEST(DmLoss, SiameseTranslationKeepsSelfDistanceZero) {
  const auto emb = EmbeddingNet::flatten({1, 8, 8});
  const Tensor x = random_tensor({5, 1, 8, 8}, 18);
  const auto policy = AugmentPolicy::parse("translate");
  Rng rng(19);
  for (int i = 0; i < 20; ++i) {
    const std::vector<AugSample> omega{sample_augmentation(policy, rng, 8, 8)};
    EXPECT_EQ(dm_loss(std::vector<Tensor>{x}, std::vector<Var>{Var::constant(x)}, emb, omega).value().item(), 0.0);
  }
}

TEST(DmLoss, EmptyRealClassIsNamed) {
  const auto emb = EmbeddingNet::flatten({1, 2, 2});
  const std::vector<Tensor> real{Tensor::zeros({1, 1, 2, 2}), Tensor()};
  const std::vector<Var> synth{Var::constant(Tensor::zeros({1, 1, 2, 2})), Var::constant(Tensor::zeros({1, 1, 2, 2}))};
  try {
    dm_loss(real, synth, emb, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos) << e.what();
  }
}

TEST(DmLoss, SkipsUndefinedSyntheticClasses) {
  const auto emb = EmbeddingNet::flatten({1, 1, 1});
  const std::vector<Tensor> real{Tensor({1, 1, 1, 1}, {2.0}), Tensor({1, 1, 1, 1}, {5.0})};
  const std::vector<Var> synth{Var(), Var::constant(Tensor({1, 1, 1, 1}, {4.0}))};
  EXPECT_EQ(dm_loss(real, synth, emb, {}).value().item(), 1.0);
}

TEST(DmLoss, SyntheticGradientMatchesFiniteDifferences) {
  const auto emb = sample_embedding(block8x8(), 20);
  const std::vector<Tensor> real{random_tensor({3, 2, 8, 8}, 21), random_tensor({2, 2, 8, 8}, 22)};
  const Tensor fixed = random_tensor({2, 2, 8, 8}, 23);
  Rng rng(24);
  const auto policy = AugmentPolicy::parse("flip,scale,rotate,color");
  const std::vector<AugSample> omega{sample_augmentation(policy, rng, 8, 8), sample_augmentation(policy, rng, 8, 8)};
  const double err = finite_difference_check(
      [&](const Var& s) {
        const std::vector<Var> synth{s, Var::constant(fixed)};
        return dm_loss(real, synth, emb, omega);
      },
      random_tensor({2, 2, 8, 8}, 25), 1e-5);
  EXPECT_LE(err, 1e-4);
}

}  // namespace
}  // namespace pdd
