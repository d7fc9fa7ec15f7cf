#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "mcs/diffusion.hpp"
#include "mcs/gmm.hpp"

using namespace mcs;

namespace {

GmmPrior::Component comp(double w, std::vector<double> mean, std::vector<double> var, std::string label) {
  const int n = static_cast<int>(mean.size());
  return {w, ImageGrid(1, n, std::move(mean)), ImageGrid(1, n, std::move(var)), std::move(label)};
}

double normal_pdf(double x, double m, double v) {
  return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2.0 * std::numbers::pi * v);
}

GmmPrior three_way() {
  return GmmPrior({1, 1}, {comp(0.5, {0.0}, {1.0}, "A"), comp(0.3, {1.0}, {1.0}, "B"), comp(0.2, {2.0}, {1.0}, "C")});
}

}  // namespace

TEST(Prior, Validation) {
  EXPECT_THROW(GmmPrior({1, 1}, {comp(0.6, {0}, {1}, "a"), comp(0.3, {0}, {1}, "b")}), std::invalid_argument);
  EXPECT_THROW(GmmPrior({1, 1}, {comp(1.0, {0}, {0.0}, "a")}), std::invalid_argument);
  EXPECT_THROW(GmmPrior({1, 2}, {comp(1.0, {0}, {1}, "a")}), std::invalid_argument);
  EXPECT_THROW(GmmPrior({1, 1}, {}), std::invalid_argument);
}

TEST(Condition, Parse) {
  EXPECT_TRUE(Condition::parse("null").is_null());
  const auto c = Condition::parse("b,a");
  EXPECT_EQ(c.to_string(), "a,b");
  EXPECT_TRUE(c.admits("a"));
  EXPECT_FALSE(c.admits("z"));
  EXPECT_THROW(Condition::of({}), std::invalid_argument);
}

TEST(Condition, Restrict) {
  const GmmPrior p = three_way();
  EXPECT_EQ(condition_restrict(p, Condition::null()).size(), 3u);
  const GmmPrior bc = condition_restrict(p, Condition::of({"B", "C"}));
  ASSERT_EQ(bc.size(), 2u);
  EXPECT_NEAR(bc[0].weight, 0.6, 1e-15);
  EXPECT_NEAR(bc[1].weight, 0.4, 1e-15);
  const GmmPrior two({1, 1}, {comp(0.5, {0}, {1}, "A"), comp(0.5, {1}, {1}, "B")});
  const GmmPrior a = condition_restrict(two, Condition::of({"A"}));
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].weight, 1.0);
  EXPECT_THROW(condition_restrict(p, Condition::of({"Z"})), UnsatisfiableCondition);
  const GmmPrior zero({1, 1}, {comp(1.0, {0}, {1}, "A"), comp(0.0, {1}, {1}, "B")});
  EXPECT_THROW(condition_restrict(zero, Condition::of({"B"})), UnsatisfiableCondition);
}

TEST(Denoiser, SingleGaussianConjugateClosedForm) {
  const auto sched = make_default_schedule(150);
  CounterRng rng(1);
  const double sigma2 = 0.04;
  const ImageGrid mu = rng.gaussian_grid({4, 4});
  const GmmPrior p({4, 4}, {{1.0, mu, ImageGrid(Shape{4, 4}, sigma2), "only"}});
  for (int t : {1, 20, 75, 140, 150}) {
    const double ab = sched.alpha_bar(t);
    const ImageGrid xt = rng.gaussian_grid({4, 4});
    const ImageGrid got = gmm_denoise(p, xt, ab, Condition::null()).x0_mean;
    const double gain = std::sqrt(ab) * sigma2 / (ab * sigma2 + 1.0 - ab);
    for (std::size_t i = 0; i < xt.size(); ++i) EXPECT_NEAR(got[i], mu[i] + gain * (xt[i] - std::sqrt(ab) * mu[i]), 1e-8);
    // Tweedie: E[x0|xt] = (xt + (1 - ᾱ) ∇log p(xt)) / sqrt(ᾱ).
    for (std::size_t i = 0; i < xt.size(); ++i) {
      const double score = -(xt[i] - std::sqrt(ab) * mu[i]) / (ab * sigma2 + 1.0 - ab);
      EXPECT_NEAR(got[i], (xt[i] + (1.0 - ab) * score) / std::sqrt(ab), 1e-8);
    }
  }
}

TEST(Denoiser, PointMassReturnsMean) {
  const auto sched = make_default_schedule(150);
  const ImageGrid mu(2, 2, std::vector<double>{0.1, 0.4, 0.7, 0.9});
  const GmmPrior p({2, 2}, {{1.0, mu, ImageGrid(Shape{2, 2}, 1e-24), "delta"}});
  CounterRng rng(2);
  for (int t : {1, 50, 150}) {
    EXPECT_LT(max_abs_diff(gmm_denoise(p, rng.gaussian_grid({2, 2}), sched.alpha_bar(t), Condition::null()).x0_mean, mu),
              1e-9);
  }
}

TEST(Denoiser, WellSeparatedResponsibility) {
  const auto sched = make_default_schedule(150);
  const GmmPrior p({1, 2}, {comp(0.5, {-3, -3}, {0.01, 0.01}, "L"), comp(0.5, {3, 3}, {0.01, 0.01}, "R")});
  const int t = 30;
  const double sa = std::sqrt(sched.alpha_bar(t));
  const ImageGrid xt(1, 2, std::vector<double>{3 * sa, 3 * sa});
  const auto r = gmm_denoise(p, xt, sched.alpha_bar(t), Condition::null());
  EXPECT_GT(r.responsibilities[1], 0.999);
  EXPECT_NEAR(r.x0_mean[0], 3.0, 1e-3);
}

TEST(Denoiser, EpsConsistencyAndConditioningCommutes) {
  const auto sched = make_default_schedule(150);
  const GmmPrior p = three_way();
  const Condition cond = Condition::of({"A", "C"});
  const GmmPrior restricted = condition_restrict(p, cond);
  CounterRng rng(3);
  for (int t : {1, 10, 90, 150}) {
    const ImageGrid xt = rng.gaussian_grid({1, 1});
    const ImageGrid eps = gmm_eps_pred(p, xt, t, sched, cond);
    const auto full = gmm_denoise(p, xt, sched.alpha_bar(t), cond);
    EXPECT_NEAR(estimate_x0(xt, eps, t, sched)[0], full.x0_mean[0], 1e-10);
    EXPECT_EQ(full.responsibilities[1], 0.0);
    EXPECT_NEAR(gmm_denoise(restricted, xt, sched.alpha_bar(t), Condition::null()).x0_mean[0], full.x0_mean[0], 1e-10);
  }
}

TEST(Denoiser, QuadratureOracle1D) {
  const GmmPrior p({1, 1}, {comp(0.3, {-0.5}, {0.04}, "a"), comp(0.7, {0.8}, {0.09}, "b")});
  for (double ab : {0.9, 0.5, 0.1}) {
    for (double xt : {-0.7, 0.0, 0.4, 1.3}) {
      double num = 0.0;
      double den = 0.0;
      const double h = 1e-4;
      for (double x0 = -4.0; x0 <= 4.0; x0 += h) {
        const double prior = 0.3 * normal_pdf(x0, -0.5, 0.04) + 0.7 * normal_pdf(x0, 0.8, 0.09);
        const double like = normal_pdf(xt, std::sqrt(ab) * x0, 1.0 - ab);
        num += x0 * prior * like;
        den += prior * like;
      }
      const double got = gmm_denoise(p, ImageGrid(1, 1, std::vector<double>{xt}), ab, Condition::null()).x0_mean[0];
      EXPECT_NEAR(got, num / den, 1e-4) << "ab=" << ab << " xt=" << xt;
    }
  }
}

TEST(Denoiser, QuadratureOracle2D) {
  const GmmPrior p({1, 2}, {comp(0.4, {0.2, -0.3}, {0.05, 0.1}, "a"), comp(0.6, {-0.4, 0.5}, {0.08, 0.03}, "b")});
  const double ab = 0.6;
  const double xt[2] = {0.1, 0.2};
  double num[2] = {0, 0};
  double den = 0.0;
  const double h = 0.004;
  for (double u = -2.5; u <= 2.5; u += h) {
    for (double v = -2.5; v <= 2.5; v += h) {
      const double prior = 0.4 * normal_pdf(u, 0.2, 0.05) * normal_pdf(v, -0.3, 0.1) +
                           0.6 * normal_pdf(u, -0.4, 0.08) * normal_pdf(v, 0.5, 0.03);
      const double like = normal_pdf(xt[0], std::sqrt(ab) * u, 1 - ab) * normal_pdf(xt[1], std::sqrt(ab) * v, 1 - ab);
      num[0] += u * prior * like;
      num[1] += v * prior * like;
      den += prior * like;
    }
  }
  const auto got = gmm_denoise(p, ImageGrid(1, 2, std::vector<double>{xt[0], xt[1]}), ab, Condition::null()).x0_mean;
  EXPECT_NEAR(got[0], num[0] / den, 1e-4);
  EXPECT_NEAR(got[1], num[1] / den, 1e-4);
}

TEST(Denoiser, UnderflowHandled) {
  const auto sched = make_default_schedule(150);
  const GmmPrior p({1, 1}, {comp(0.5, {0}, {1e-6}, "a"), comp(0.5, {1}, {1e-6}, "b")});
  const ImageGrid eps = gmm_eps_pred(p, ImageGrid(1, 1, std::vector<double>{500.0}), 1, sched, Condition::null());
  EXPECT_TRUE(all_finite(eps));
}

TEST(ExactPosterior, ScalarConjugate) {
  const GmmPrior p({1, 1}, {comp(1.0, {0.0}, {1.0}, "g")});
  const auto post = gmm_exact_posterior(p, identity_op({1, 1}), ImageGrid(1, 1, std::vector<double>{1.0}), 1.0);
  ASSERT_EQ(post.components.size(), 1u);
  EXPECT_NEAR(post.components[0].mean(0), 0.5, 1e-14);
  EXPECT_NEAR(post.components[0].covariance(0, 0), 0.5, 1e-14);
  EXPECT_NEAR(post.log_density(ImageGrid(1, 1, std::vector<double>{0.2})), std::log(normal_pdf(0.2, 0.5, 0.5)), 1e-12);
}

TEST(ExactPosterior, NoiselessIdentityCollapses) {
  const GmmPrior p({1, 2}, {comp(0.5, {0, 0}, {0.1, 0.1}, "a"), comp(0.5, {1, 1}, {0.1, 0.1}, "b")});
  const ImageGrid y(1, 2, std::vector<double>{0.8, 0.9});
  const auto post = gmm_exact_posterior(p, identity_op({1, 2}), y, 0.0);
  for (const auto& c : post.components) {
    EXPECT_NEAR(c.mean(0), 0.8, 1e-7);
    EXPECT_NEAR(c.mean(1), 0.9, 1e-7);
  }
  EXPECT_GT(post.components[1].weight, post.components[0].weight);
}

TEST(ExactPosterior, WeightsMatchQuadrature1D) {
  const GmmPrior p({1, 1}, {comp(0.3, {-0.5}, {0.04}, "a"), comp(0.7, {0.8}, {0.09}, "b")});
  const double y = 0.1;
  const double nv = 0.2;
  const auto post = gmm_exact_posterior(p, identity_op({1, 1}), ImageGrid(1, 1, std::vector<double>{y}), nv);
  double mass[2] = {0, 0};
  const double h = 1e-4;
  for (double x = -4.0; x <= 4.0; x += h) {
    const double like = normal_pdf(y, x, nv);
    mass[0] += 0.3 * normal_pdf(x, -0.5, 0.04) * like;
    mass[1] += 0.7 * normal_pdf(x, 0.8, 0.09) * like;
  }
  EXPECT_NEAR(post.components[0].weight, mass[0] / (mass[0] + mass[1]), 1e-4);
  EXPECT_NEAR(post.components[1].weight, mass[1] / (mass[0] + mass[1]), 1e-4);
}

TEST(ExactPosterior, WeightsMatchQuadrature2DUnderProjection) {
  // y = (x1 + x2) / 2 + n: a 1x2 averaging operator.
  const GmmPrior p({1, 2}, {comp(0.5, {0.0, 0.6}, {0.05, 0.02}, "a"), comp(0.5, {0.5, -0.2}, {0.03, 0.06}, "b")});
  Eigen::MatrixXd m(1, 2);
  m << 0.5, 0.5;
  const double y = 0.25;
  const double nv = 0.01;
  const auto post = gmm_exact_posterior(p, dense_op(m), ImageGrid(1, 1, std::vector<double>{y}), nv);
  double mass[2] = {0, 0};
  const double h = 0.004;
  for (double u = -2.0; u <= 2.5; u += h) {
    for (double v = -2.0; v <= 2.5; v += h) {
      const double like = normal_pdf(y, 0.5 * (u + v), nv);
      mass[0] += 0.5 * normal_pdf(u, 0.0, 0.05) * normal_pdf(v, 0.6, 0.02) * like;
      mass[1] += 0.5 * normal_pdf(u, 0.5, 0.03) * normal_pdf(v, -0.2, 0.06) * like;
    }
  }
  const double w0 = mass[0] / (mass[0] + mass[1]);
  EXPECT_NEAR(post.components[0].weight, w0, 1e-4);
  EXPECT_NEAR(post.components[1].weight, 1.0 - w0, 1e-4);
}

TEST(ExactPosterior, Errors) {
  const GmmPrior p({1, 2}, {comp(1.0, {0, 0}, {1, 1}, "a")});
  EXPECT_THROW(gmm_exact_posterior(p, identity_op({1, 3}), ImageGrid(Shape{1, 3}), 0.1), std::invalid_argument);
  EXPECT_THROW(gmm_exact_posterior(p, identity_op({1, 2}), ImageGrid(Shape{1, 2}), -1.0), std::invalid_argument);
  EXPECT_THROW(gmm_exact_posterior(p, identity_op({1, 2}), ImageGrid(Shape{1, 2}), 0.1, 2), OperatorTooLarge);
}

TEST(Sampling, PointMassAndZeroWeight) {
  const GmmPrior delta({1, 1}, {comp(1.0, {0.25}, {1e-300}, "d")});
  CounterRng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(gmm_sample(delta, rng).x[0], 0.25, 1e-140);
  const GmmPrior p({1, 1}, {comp(1.0, {0}, {1}, "a"), comp(0.0, {5}, {1}, "b")});
  for (int i = 0; i < 100000; ++i) ASSERT_EQ(gmm_sample(p, rng).component, 0u);
}

TEST(Sampling, ComponentFrequencies) {
  const GmmPrior p = three_way();
  CounterRng rng(2);
  const int n = 10000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) ++counts[gmm_sample(p, rng).component];
  const double w[3] = {0.5, 0.3, 0.2};
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(counts[k] / double(n), w[k], 3.0 * std::sqrt(w[k] * (1 - w[k]) / n));
}

TEST(Assign, MeansTiesAndSeparation) {
  const GmmPrior p({1, 2}, {comp(0.5, {0, 0}, {0.01, 0.01}, "a"), comp(0.5, {0.6, 0.6}, {0.01, 0.01}, "b")});
  EXPECT_EQ(component_assign(p, p[1].mean), "b");
  EXPECT_EQ(component_assign(p, ImageGrid(1, 2, std::vector<double>{0.3, 0.3})), "a");  // tie: lower index
  CounterRng rng(3);
  int hits = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    const auto d = gmm_sample(p, rng);
    hits += component_assign(p, d.x) == d.label ? 1 : 0;
  }
  EXPECT_GE(hits, 0.99 * n);
}
