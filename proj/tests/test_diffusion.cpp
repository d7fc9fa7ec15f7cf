#include <cmath>

#include <gtest/gtest.h>

#include "mcs/diffusion.hpp"
#include "mcs/rng.hpp"

using namespace mcs;

TEST(Schedule, SingleStep) {
  const auto s = make_linear_schedule(1, 0.02, 0.02);
  EXPECT_EQ(s.steps(), 1);
  EXPECT_DOUBLE_EQ(s.beta(1), 0.02);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.98);
}

TEST(Schedule, TwoStepHandProduct) {
  const auto s = make_linear_schedule(2, 0.1, 0.3);
  EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bar(2), 0.63, 1e-15);
}

TEST(Schedule, LiteralDdpm150MatchesDirectProduct) {
  // Reference from an independent 40-digit product of (1 - β_i).
  const auto s = make_linear_schedule(150, 1e-4, 0.02);
  EXPECT_NEAR(s.alpha_bar(150), 0.21921859918582302, 1e-14);
}

TEST(Schedule, Invariants) {
  for (const auto& s : {make_default_schedule(150), make_linear_schedule(150, 1e-4, 0.02), make_default_schedule(10)}) {
    EXPECT_EQ(s.alpha_bar(0), 1.0);
    for (int t = 1; t <= s.steps(); ++t) {
      EXPECT_GT(s.beta(t), 0.0);
      EXPECT_LT(s.beta(t), 1.0);
      EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
      EXPECT_GT(s.alpha_bar(t), 0.0);
      EXPECT_NEAR(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t), 1e-12 * s.alpha_bar(t));
      if (t == 1) {
        EXPECT_EQ(s.posterior_variance(t), 0.0);
      } else {
        EXPECT_GT(s.posterior_variance(t), 0.0);
      }
    }
  }
}

TEST(Schedule, DefaultEndsNearPureNoise) {
  const auto s = make_default_schedule(150);
  EXPECT_LT(s.alpha_bar(150), 1e-4);
  EXPECT_NEAR(s.beta(1), 1e-4 * 1000.0 / 150.0, 1e-15);
  EXPECT_NEAR(s.beta(150), 0.02 * 1000.0 / 150.0, 1e-15);
}

TEST(Schedule, RejectsInvalid) {
  EXPECT_THROW(make_linear_schedule(0, 0.1, 0.2), std::invalid_argument);
  EXPECT_THROW(make_linear_schedule(5, 0.0, 0.2), std::invalid_argument);
  EXPECT_THROW(make_linear_schedule(5, 0.3, 0.2), std::invalid_argument);
  EXPECT_THROW(make_linear_schedule(5, 0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule(std::vector<double>{0.5, 1.5}), std::invalid_argument);
  const auto s = make_linear_schedule(2, 0.1, 0.3);
  EXPECT_THROW((void)s.alpha_bar(3), std::out_of_range);
  EXPECT_THROW((void)s.beta(0), std::out_of_range);
}

TEST(ForwardNoise, ZeroNoiseAndHandValue) {
  const auto s = make_default_schedule(150);
  CounterRng rng(3);
  const ImageGrid x0 = rng.gaussian_grid({4, 4});
  const ImageGrid zero(Shape{4, 4}, 0.0);
  const ImageGrid out = forward_noise(x0, 40, zero, s);
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_DOUBLE_EQ(out[i], std::sqrt(s.alpha_bar(40)) * x0[i]);

  // ᾱ = 0.64: 0.8 * 0.5 + 0.6 * 1 = 1.
  const NoiseSchedule one_step(std::vector<double>{0.36});
  const ImageGrid hand = forward_noise(ImageGrid(Shape{2, 3}, 0.5), 1, ImageGrid(Shape{2, 3}, 1.0), one_step);
  for (double v : hand.values()) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(ForwardNoise, IdentityLimit) {
  const NoiseSchedule tiny(std::vector<double>{1e-12});
  CounterRng rng(8);
  const ImageGrid x0 = rng.gaussian_grid({3, 3});
  const ImageGrid eps = rng.gaussian_grid({3, 3});
  const ImageGrid xt = forward_noise(x0, 1, eps, tiny);
  EXPECT_LE(norm(xt - x0), std::sqrt(1.0 - tiny.alpha_bar(1)) * norm(eps) + 1e-12 * norm(x0));
}

TEST(ForwardNoise, ShapeMismatchThrows) {
  const auto s = make_default_schedule(10);
  EXPECT_THROW(forward_noise(ImageGrid(Shape{2, 2}), 1, ImageGrid(Shape{2, 3}), s), std::invalid_argument);
}

TEST(ForwardNoise, MonteCarloMoments) {
  const auto s = make_default_schedule(150);
  const int t = 60;
  const int n = 20000;
  const ImageGrid x0(1, 2, std::vector<double>{0.3, -0.7});
  CounterRng rng(11);
  double sum[2] = {0, 0};
  double sq[2] = {0, 0};
  for (int i = 0; i < n; ++i) {
    const ImageGrid xt = forward_noise(x0, t, rng.gaussian_grid(x0.shape()), s);
    for (int k = 0; k < 2; ++k) {
      sum[k] += xt[k];
      sq[k] += xt[k] * xt[k];
    }
  }
  const double var = 1.0 - s.alpha_bar(t);
  for (int k = 0; k < 2; ++k) {
    const double m = sum[k] / n;
    const double v = sq[k] / n - m * m;
    EXPECT_NEAR(m, std::sqrt(s.alpha_bar(t)) * x0[k], 3.0 * std::sqrt(var / n));
    EXPECT_NEAR(v, var, 3.0 * var * std::sqrt(2.0 / n));
  }
}

TEST(EstimateX0, RoundTripEveryStep) {
  const auto s = make_default_schedule(150);
  CounterRng rng(21);
  const ImageGrid x0 = rng.gaussian_grid({8, 8});
  const ImageGrid eps = rng.gaussian_grid({8, 8});
  for (int t = 1; t <= 150; ++t) {
    EXPECT_LT(max_abs_diff(estimate_x0(forward_noise(x0, t, eps, s), eps, t, s), x0), 1e-8) << "t=" << t;
  }
}

TEST(EstimateX0, ZeroEps) {
  const auto s = make_default_schedule(150);
  const ImageGrid xt(Shape{2, 2}, 0.4);
  const ImageGrid out = estimate_x0(xt, ImageGrid(Shape{2, 2}, 0.0), 75, s);
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 0.4 / std::sqrt(s.alpha_bar(75)));
}

TEST(PosteriorStep, HandEvaluatedMean) {
  // T=2 (β = 0.1, 0.3), t=2, x_t = 1, ε = 0.5, no noise:
  // μ = (1 / sqrt(0.7)) (1 - 0.3 / sqrt(0.37) · 0.5), evaluated independently.
  const auto s = make_linear_schedule(2, 0.1, 0.3);
  const ImageGrid out = posterior_step_unguided(ImageGrid(Shape{2, 2}, 1.0), ImageGrid(Shape{2, 2}, 0.5), 2, s, ImageGrid(Shape{2, 2}, 0.0));
  for (double v : out.values()) EXPECT_NEAR(v, 0.90048704987494642, 1e-14);
  EXPECT_NEAR(s.posterior_variance(2), 0.081081081081081081, 1e-15);
}

TEST(PosteriorStep, TerminalStepIgnoresNoise) {
  const auto s = make_default_schedule(150);
  CounterRng rng(5);
  const ImageGrid xt = rng.gaussian_grid({3, 3});
  const ImageGrid eps = rng.gaussian_grid({3, 3});
  const ImageGrid noise = rng.gaussian_grid({3, 3});
  EXPECT_EQ(posterior_step_unguided(xt, eps, 1, s, noise), posterior_mean(xt, eps, 1, s));
}

TEST(PosteriorStep, ZeroEpsZeroNoise) {
  const auto s = make_default_schedule(150);
  const ImageGrid xt(Shape{2, 2}, 0.8);
  const ImageGrid out = posterior_step_unguided(xt, ImageGrid(Shape{2, 2}, 0.0), 90, s, ImageGrid(Shape{2, 2}, 0.0));
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 0.8 / std::sqrt(s.alpha(90)));
}

TEST(Rng, SplitMixReferenceAndDeterminism) {
  // SplitMix64 seeded with 0 produces 0xE220A8397B1DCDAF first.
  CounterRng a(0);
  EXPECT_EQ(a.next_u64(), 0xE220A8397B1DCDAFULL);
  CounterRng b(1234);
  CounterRng c(1234);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(b.gaussian(), c.gaussian());
  EXPECT_EQ(derive_seed(10, 3), 9u);
}

TEST(Rng, GaussianMoments) {
  CounterRng rng(77);
  const int n = 40000;
  double s = 0.0;
  double sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.gaussian();
    s += z;
    sq += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 3.0 / std::sqrt(n));
  EXPECT_NEAR(sq / n, 1.0, 3.0 * std::sqrt(2.0 / n));
}
