#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "pdd/kkt.hpp"
#include "pdd/rng.hpp"
#include "test_util.hpp"

namespace pdd {
namespace {

using testing::random_tensor;

ModelSpec mlp4x4() {
  return {.architecture = Architecture::Mlp, .channels = 1, .height = 4, .width = 4, .classes = 3, .hidden = 5, .depth = 2};
}

ModelSpec linear4x4() {
  return {.architecture = Architecture::Linear, .channels = 1, .height = 4, .width = 4, .classes = 3};
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> labels(n);
  for (auto& y : labels) y = rng.below(classes);
  return labels;
}

TEST(CeMargin, UniformLogits) {
  const std::vector<double> logits(10, 0.7);
  const auto r = ce_margin(logits, 3);
  EXPECT_NEAR(r.loss, 2.302585092994045684, 1e-15);
  EXPECT_EQ(r.margin, -r.loss);
}

TEST(CeMargin, ConfidentLogitsVanish) {
  std::vector<double> logits(10, 0.0);
  logits[4] = 50.0;
  EXPECT_LE(ce_margin(logits, 4).loss, 1e-20);
}

TEST(CeMargin, TwoClassHandValue) {
  const std::vector<double> logits{1.0, 0.0};
  // ln(1 + e^-1), evaluated at 40 digits.
  EXPECT_NEAR(ce_margin(logits, 0).loss, 0.31326168751822283405, 1e-15);
  EXPECT_THROW(ce_margin(logits, 2), Error);
}

TEST(CrossEntropy, MatchesScalarMargin) {
  const Tensor logits = random_tensor({4, 3}, 1, -3, 3);
  const std::vector<std::size_t> labels{0, 2, 1, 2};
  const Tensor losses = cross_entropy(Var::constant(logits), labels).value();
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(losses[i], ce_margin(logits.values().subspan(i * 3, 3), labels[i]).loss, 1e-14);
  }
}

TEST(PrimalLoss, GatedIsZeroWhenAllCorrect) {
  const auto spec = linear4x4();
  const auto params = init_params(spec, 2).as_constants();
  const Tensor images = random_tensor({6, 1, 4, 4}, 3);
  const Tensor logits = forward(spec, params, Var::constant(images)).value();
  std::vector<std::size_t> predicted(6);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto row = logits.values().subspan(i * 3, 3);
    predicted[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  EXPECT_EQ(primal_loss(spec, params, Var::constant(images), predicted, true).value().item(), 0.0);
  EXPECT_GT(primal_loss(spec, params, Var::constant(images), predicted, false).value().item(), 0.0);
}

TEST(PrimalLoss, SingleSampleEqualsCeMargin) {
  const auto spec = mlp4x4();
  const auto params = init_params(spec, 4).as_constants();
  const Tensor image = random_tensor({1, 1, 4, 4}, 5);
  const std::vector<std::size_t> label{1};
  const Tensor logits = forward(spec, params, Var::constant(image)).value();
  EXPECT_NEAR(primal_loss(spec, params, Var::constant(image), label, false).value().item(),
              ce_margin(logits.values(), 1).loss, 1e-15);
}

TEST(PrimalLoss, GatedNeverExceedsUngated) {
  const auto spec = mlp4x4();
  const auto params = init_params(spec, 6).as_constants();
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const Var images = Var::constant(random_tensor({8, 1, 4, 4}, 100 + trial, -2, 2));
    const auto labels = random_labels(8, 3, 500 + trial);
    EXPECT_LE(primal_loss(spec, params, images, labels, true).value().item(),
              primal_loss(spec, params, images, labels, false).value().item());
  }
}

TEST(PrimalLoss, GateIsAStopGradientMask) {
  const auto spec = mlp4x4();
  const auto params = init_params(spec, 7).as_constants();
  const std::vector<std::size_t> labels{0, 1, 2, 0};
  const double err = finite_difference_check(
      [&](const Var& x) { return primal_loss(spec, params, x, labels, true); }, random_tensor({4, 1, 4, 4}, 8), 1e-5);
  EXPECT_LE(err, 1e-5);
}

TEST(AggregatedGradient, ZeroMultipliersGiveZero) {
  const auto spec = mlp4x4();
  const auto params = init_params(spec, 1);
  const Tensor agg = aggregated_gradient(spec, params, Var::constant(random_tensor({3, 1, 4, 4}, 2)), {{0, 1, 2}},
                                         Var::constant(Tensor::zeros({3})))
                         .value();
  EXPECT_EQ(agg.size(), parameter_count(spec));
  for (double v : agg.values()) EXPECT_EQ(v, 0.0);
}

TEST(AggregatedGradient, LinearInMultipliers) {
  const auto spec = mlp4x4();
  const auto params = init_params(spec, 1);
  const Var images = Var::constant(random_tensor({3, 1, 4, 4}, 2));
  const std::vector<std::size_t> labels{0, 1, 2};
  const Tensor lambdas = random_tensor({3}, 3, 0.1, 1.0);
  const Tensor base = aggregated_gradient(spec, params, images, labels, Var::constant(lambdas)).value();
  std::vector<double> tripled = lambdas.to_vector();
  for (auto& v : tripled) v *= 3.0;
  const Tensor scaled = aggregated_gradient(spec, params, images, labels, Var::constant(Tensor({3}, tripled))).value();
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(scaled[i], 3.0 * base[i], 1e-12 * (1.0 + std::abs(base[i])));
}

// One-point set: compare against central differences of the per-sample loss
// in every parameter coordinate.
TEST(AggregatedGradient, OnePointMatchesFiniteDifferences) {
  const auto spec = mlp4x4();
  const auto params = init_params(spec, 11);
  const Tensor image = random_tensor({1, 1, 4, 4}, 12);
  const std::vector<std::size_t> label{2};
  const double lambda = 0.75;
  const Tensor agg =
      aggregated_gradient(spec, params, Var::constant(image), label, Var::constant(Tensor({1}, {lambda}))).value();

  const Tensor flat = flatten_params(params);
  auto loss_at = [&](const std::vector<double>& theta) {
    const Parameters p = unflatten_params(spec, Tensor({theta.size()}, theta));
    const Tensor logits = forward(spec, p, image);
    return ce_margin(logits.values(), label[0]).loss;
  };
  const double h = 1e-5;
  double worst = 0.0;
  std::vector<double> theta = flat.to_vector();
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double saved = theta[k];
    theta[k] = saved + h;
    const double up = loss_at(theta);
    theta[k] = saved - h;
    const double down = loss_at(theta);
    theta[k] = saved;
    const double expected = -lambda * (up - down) / (2 * h);
    worst = std::max(worst, std::abs(agg[k] - expected) / std::max(1.0, std::abs(agg[k])));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Stationarity, IdentityAndOpposite) {
  const Tensor theta = random_tensor({37}, 21);
  EXPECT_EQ(stationarity_loss(theta, Var::constant(theta)).value().item(), 0.0);
  std::vector<double> flipped = theta.to_vector();
  for (auto& v : flipped) v = -v;
  EXPECT_EQ(stationarity_loss(theta, Var::constant(Tensor({37}, flipped))).value().item(), 2.0);
}

TEST(Stationarity, OrthogonalIsOne) {
  EXPECT_EQ(stationarity_loss(Tensor({2}, {1.0, 0.0}), Var::constant(Tensor({2}, {0.0, 3.0}))).value().item(), 1.0);
}

TEST(Stationarity, DegenerateVectors) {
  EXPECT_EQ(stationarity_loss(Tensor({2}, {1.0, 2.0}), Var::constant(Tensor::zeros({2}))).value().item(), 1.0);
  EXPECT_THROW(stationarity_loss(Tensor::zeros({2}), Var::constant(Tensor({2}, {1.0, 0.0}))), NumericError);
  EXPECT_THROW(stationarity_loss(Tensor::zeros({2}), Var::constant(Tensor::zeros({3}))), ShapeError);
}

TEST(Stationarity, BoundedAndScaleInvariant) {
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    const Tensor theta = random_tensor({9}, 300 + trial);
    const Tensor agg = random_tensor({9}, 400 + trial);
    const double d = stationarity_loss(theta, Var::constant(agg)).value().item();
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
    std::vector<double> scaled = agg.to_vector();
    for (auto& v : scaled) v *= 17.5;
    EXPECT_NEAR(stationarity_loss(theta, Var::constant(Tensor({9}, scaled))).value().item(), d, 1e-14);
  }
}

TEST(Stationarity, InvariantToUniformMultiplierScaling) {
  const auto spec = mlp4x4();
  const auto params = init_params(spec, 31);
  const Var images = Var::constant(random_tensor({4, 1, 4, 4}, 32));
  const std::vector<std::size_t> labels{0, 1, 2, 1};
  const Tensor lambdas = random_tensor({4}, 33, 0.1, 1.0);
  std::vector<double> scaled = lambdas.to_vector();
  for (auto& v : scaled) v *= 40.0;
  const double a = dkkt_loss(spec, params, images, labels, Var::constant(lambdas), 1.0, false).stat.value().item();
  const double b =
      dkkt_loss(spec, params, images, labels, Var::constant(Tensor({4}, scaled)), 1.0, false).stat.value().item();
  EXPECT_NEAR(a, b, 1e-13);
}

TEST(Dkkt, ZeroAlphaIsPrimal) {
  const auto spec = mlp4x4();
  const auto params = init_params(spec, 41);
  const Var images = Var::constant(random_tensor({4, 1, 4, 4}, 42));
  const std::vector<std::size_t> labels{0, 1, 2, 1};
  const auto terms = dkkt_loss(spec, params, images, labels, Var::constant(Tensor::full({4}, 0.25)), 0.0, false);
  EXPECT_EQ(terms.total.value(), primal_loss(spec, params.as_constants(), images, labels, false).value());
}

TEST(Dkkt, WeightSchedule) {
  EXPECT_EQ(default_alpha(10, false), 0.1);
  EXPECT_EQ(default_alpha(50, false), 0.01);
  EXPECT_EQ(default_alpha(0, true), 0.001);
  EXPECT_EQ(default_gamma(50), 0.01);
  EXPECT_EQ(default_gamma(1), 0.001);
  EXPECT_EQ(default_gamma(10), 0.001);
}

TEST(Dkkt, PixelAndMultiplierGradientsMatchFiniteDifferences) {
  const auto spec = mlp4x4();
  const auto params = init_params(spec, 51);
  const std::vector<std::size_t> labels{0, 1, 2};
  const Tensor images = random_tensor({3, 1, 4, 4}, 52);
  const Tensor lambdas = random_tensor({3}, 53, 0.2, 1.0);
  for (bool gated : {false, true}) {
    const double pixel_err = finite_difference_check(
        [&](const Var& x) { return dkkt_loss(spec, params, x, labels, Var::constant(lambdas), 0.5, gated).total; },
        images, 1e-5);
    EXPECT_LE(pixel_err, 1e-5) << "gated=" << gated;
  }
  const double lambda_err = finite_difference_check(
      [&](const Var& l) { return dkkt_loss(spec, params, Var::constant(images), labels, l, 0.5, false).total; },
      lambdas, 1e-5);
  EXPECT_LE(lambda_err, 1e-5);
}

// Linear model, fixed multipliers, ungated: a line search along the negative
// pixel gradient (golden section over the step) must not increase the loss.
TEST(Dkkt, LineSearchStepDoesNotIncrease) {
  const auto spec = linear4x4();
  const auto params = init_params(spec, 61);
  const std::vector<std::size_t> labels{0, 1, 2, 2};
  const Var lambdas = Var::constant(Tensor::full({4}, 0.25));
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const Tensor x0 = random_tensor({4, 1, 4, 4}, 700 + trial);
    auto loss = [&](const Tensor& x) {
      return dkkt_loss(spec, params, Var::constant(x), labels, lambdas, 0.1, false).total.value().item();
    };
    const Var leaf = Var::leaf(x0);
    const Tensor g = grad(dkkt_loss(spec, params, leaf, labels, lambdas, 0.1, false).total, {{leaf}})[0].value();
    auto along = [&](double t) {
      std::vector<double> v = x0.to_vector();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= t * g[i];
      return loss(Tensor(x0.shape(), v));
    };
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = 0.0, hi = 4.0;
    for (int it = 0; it < 80; ++it) {
      const double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
      if (along(a) < along(b)) hi = b; else lo = a;
    }
    const double start = along(0.0);
    const double best = std::min(along(0.5 * (lo + hi)), start);
    EXPECT_LE(best, start);
    EXPECT_LT(along(1e-4), start) << "negative gradient is not a descent direction";
  }
}

TEST(ProjectLambdas, ClampsAndIsIdempotent) {
  EXPECT_EQ(project_lambdas(Tensor({2}, {-0.5, 0.2})), Tensor({2}, {0.0, 0.2}));
  const Tensor feasible({3}, {0.0, 1.0, 2.5});
  EXPECT_EQ(project_lambdas(feasible), feasible);
  const Tensor raw = random_tensor({20}, 71);
  EXPECT_EQ(project_lambdas(project_lambdas(raw)), project_lambdas(raw));

  SyntheticSet set{random_tensor({2, 1, 4, 4}, 72), {0, 1}, Tensor({2}, {-1.0, 3.0}), 3};
  EXPECT_THROW(set.validate(), Error);
  const SyntheticSet projected = project_lambdas(set);
  EXPECT_NO_THROW(projected.validate());
  EXPECT_EQ(projected.images, set.images);
  EXPECT_EQ(projected.labels, set.labels);
}

}  // namespace
}  // namespace pdd
