#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mcs/linops.hpp"
#include "mcs/rng.hpp"

using namespace mcs;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
  CounterRng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = rng.gaussian();
  return m;
}

std::vector<LinearOperator> operator_zoo() {
  return {
      avgpool_op(8, 8, 2),
      avgpool_op(8, 8, 4),
      avgpool_op(16, 16, 8),
      gaussian_blur_op(8, 8, 1.2, 5),
      gaussian_blur_op(9, 7, 0.7, 3),
      compose({gaussian_blur_op(8, 8, 1.0, 5), avgpool_op(8, 8, 2)}),
      dense_op(random_matrix(6, 12, 1)),
      dense_op(random_matrix(10, 4, 2)),
      identity_op({3, 5}),
  };
}

}  // namespace

TEST(AvgPool, BlockMean) {
  const auto a = avgpool_op(2, 2, 2);
  const ImageGrid x(2, 2, std::vector<double>{1, 2, 3, 4});
  const ImageGrid y = a.apply(x);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_DOUBLE_EQ(y[0], 2.5);
}

TEST(AvgPool, ConstantsPreserved) {
  const ImageGrid y = avgpool_op(12, 8, 4).apply(ImageGrid(Shape{12, 8}, 0.37));
  EXPECT_EQ(y.shape(), (Shape{3, 2}));
  for (double v : y.values()) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(AvgPool, RejectsNonDivisible) {
  EXPECT_THROW(avgpool_op(10, 8, 4), std::invalid_argument);
  EXPECT_THROW(avgpool_op(8, 8, 0), std::invalid_argument);
}

TEST(AvgPool, PseudoInverseReplicates) {
  const auto a = avgpool_op(2, 2, 2);
  const ImageGrid x = pseudo_apply(a, ImageGrid(1, 1, std::vector<double>{2.5}));
  for (double v : x.values()) EXPECT_DOUBLE_EQ(v, 2.5);
  EXPECT_DOUBLE_EQ(a.apply(x)[0], 2.5);
  const ImageGrid p = projection_apply(a, ImageGrid(2, 2, std::vector<double>{1, 2, 3, 4}));
  for (double v : p.values()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(AvgPool, AnalyticPseudoMatchesSvd) {
  for (int s : {2, 4, 8}) {
    const auto a = avgpool_op(16, 16, s);
    const auto via_svd = dense_op(a.materialize(), a.in_shape(), a.out_shape());
    CounterRng rng(40 + s);
    for (int trial = 0; trial < 5; ++trial) {
      const ImageGrid y = rng.gaussian_grid(a.out_shape());
      EXPECT_LT(max_abs_diff(pseudo_apply(a, y), pseudo_apply(via_svd, y)), 1e-8);
    }
  }
}

TEST(Blur, KernelNormalizedAndConstantsPreserved) {
  const auto taps = detail::GaussianBlurOp::make_taps(1.5, 9);
  double total = 0.0;
  for (double t : taps) total += t;
  EXPECT_NEAR(total, 1.0, 1e-15);
  const ImageGrid y = gaussian_blur_op(10, 10, 1.5, 9).apply(ImageGrid(Shape{10, 10}, 0.6));
  for (double v : y.values()) EXPECT_NEAR(v, 0.6, 1e-14);
}

TEST(Blur, UnitKernelIsIdentity) {
  CounterRng rng(4);
  const ImageGrid x = rng.gaussian_grid({5, 6});
  EXPECT_LT(max_abs_diff(gaussian_blur_op(5, 6, 0.01, 1).apply(x), x), 1e-15);
}

TEST(Blur, ImpulseResponseIsKernel) {
  const int n = 15;
  const double sigma = 1.3;
  const int k = 7;
  ImageGrid x(Shape{n, n});
  x(7, 7) = 1.0;
  const ImageGrid y = gaussian_blur_op(n, n, sigma, k).apply(x);
  // Independent kernel: unnormalized Gaussian samples divided by their sum.
  std::vector<double> g(k);
  double sum = 0.0;
  for (int i = 0; i < k; ++i) sum += g[i] = std::exp(-(i - 3) * (i - 3) / (2 * sigma * sigma));
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) EXPECT_NEAR(y(4 + i, 4 + j), g[i] * g[j] / (sum * sum), 1e-15);
  }
  EXPECT_NEAR(y(7, 0), 0.0, 0.0);
}

TEST(Blur, RejectsBadKernels) {
  EXPECT_THROW(gaussian_blur_op(8, 8, 1.0, 4), std::invalid_argument);
  EXPECT_THROW(gaussian_blur_op(8, 8, 1.0, 9), std::invalid_argument);
  EXPECT_THROW(gaussian_blur_op(8, 8, 0.0, 3), std::invalid_argument);
}

TEST(Operators, AdjointIdentity) {
  CounterRng rng(99);
  for (const auto& a : operator_zoo()) {
    for (int trial = 0; trial < 5; ++trial) {
      const ImageGrid x = rng.gaussian_grid(a.in_shape());
      const ImageGrid y = rng.gaussian_grid(a.out_shape());
      EXPECT_NEAR(dot(a.apply(x), y), dot(x, a.apply_transpose(y)), 1e-9) << a.describe();
    }
  }
}

TEST(Operators, MaterializeMatchesApply) {
  CounterRng rng(5);
  for (const auto& a : operator_zoo()) {
    const ImageGrid x = rng.gaussian_grid(a.in_shape());
    EXPECT_LT((a.materialize() * x.as_eigen() - a.apply(x).as_eigen()).cwiseAbs().maxCoeff(), 1e-12) << a.describe();
  }
}

TEST(Operators, MoorePenroseAxioms) {
  for (const auto& a : operator_zoo()) {
    const Eigen::MatrixXd m = a.materialize();
    const Eigen::MatrixXd p = materialize_pseudo(a);
    EXPECT_LT((m * p * m - m).cwiseAbs().maxCoeff(), 1e-8) << a.describe();
    // A+ of an ill-conditioned blur has entries near 1e5, so this axiom is checked relative to |A+|.
    EXPECT_LT((p * m * p - p).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, p.cwiseAbs().maxCoeff())) << a.describe();
    EXPECT_LT(((m * p).transpose() - m * p).cwiseAbs().maxCoeff(), 1e-8) << a.describe();
    EXPECT_LT(((p * m).transpose() - p * m).cwiseAbs().maxCoeff(), 1e-8) << a.describe();
  }
}

TEST(Operators, ProjectionIdempotentSelfAdjointAndFixesRange) {
  CounterRng rng(17);
  for (const auto& a : operator_zoo()) {
    const ImageGrid x = rng.gaussian_grid(a.in_shape());
    const ImageGrid z = rng.gaussian_grid(a.in_shape());
    const ImageGrid px = projection_apply(a, x);
    EXPECT_LT(max_abs_diff(projection_apply(a, px), px), 1e-9) << a.describe();
    EXPECT_NEAR(dot(px, z), dot(x, projection_apply(a, z)), 1e-9) << a.describe();
    const ImageGrid in_range = pseudo_apply(a, rng.gaussian_grid(a.out_shape()));
    EXPECT_LT(max_abs_diff(projection_apply(a, in_range), in_range), 1e-9 * std::max(1.0, norm(in_range)))
        << a.describe();
  }
}

TEST(Operators, IdentityPseudo) {
  CounterRng rng(2);
  const ImageGrid y = rng.gaussian_grid({4, 4});
  EXPECT_EQ(pseudo_apply(identity_op({4, 4}), y), y);
}

TEST(Operators, CompositionOrderAndPseudo) {
  CounterRng rng(8);
  const auto blur = gaussian_blur_op(8, 8, 1.0, 5);
  const auto pool = avgpool_op(8, 8, 2);
  const auto c = compose({blur, pool});
  const ImageGrid x = rng.gaussian_grid({8, 8});
  EXPECT_EQ(c.apply(x), pool.apply(blur.apply(x)));
  // The composite pseudo-inverse is not the composition of member pseudo-inverses.
  const ImageGrid y = rng.gaussian_grid(c.out_shape());
  EXPECT_LT(max_abs_diff(c.apply(pseudo_apply(c, y)), y), 1e-9);
  EXPECT_THROW(compose({pool, blur}), std::invalid_argument);
}

TEST(Operators, SizeCap) {
  const auto big = gaussian_blur_op(80, 80, 1.0, 3);  // 6400 x 6400 > 4096²
  EXPECT_THROW((void)big.materialize(), OperatorTooLarge);
  EXPECT_THROW(pseudo_apply(big, ImageGrid(Shape{80, 80})), OperatorTooLarge);
  // avgpool stays analytic at any size.
  EXPECT_NO_THROW(pseudo_apply(avgpool_op(256, 256, 8), ImageGrid(Shape{32, 32}, 1.0)));
}

TEST(Operators, ShapeChecks) {
  const auto a = avgpool_op(8, 8, 2);
  EXPECT_THROW((void)a.apply(ImageGrid(Shape{4, 4})), std::invalid_argument);
  EXPECT_THROW((void)a.apply_transpose(ImageGrid(Shape{8, 8})), std::invalid_argument);
}

TEST(ParseOperator, Specs) {
  const Shape s{16, 16};
  EXPECT_EQ(parse_operator("identity", s).kind(), OperatorKind::identity);
  const auto pool = parse_operator("avgpool:s=8", s);
  EXPECT_EQ(pool.out_shape(), (Shape{2, 2}));
  const auto blur = parse_operator("blur:sigma=2,k=9", s);
  EXPECT_EQ(blur.describe(), "blur:sigma=2,k=9");
  EXPECT_EQ(parse_operator("blur:sigma=1", s).describe(), "blur:sigma=1,k=7");
  const auto c = parse_operator("compose:[blur:sigma=1,k=5;avgpool:s=4]", s);
  EXPECT_EQ(c.kind(), OperatorKind::composition);
  EXPECT_EQ(c.out_shape(), (Shape{4, 4}));
  EXPECT_THROW(parse_operator("bicubic:s=2", s), std::invalid_argument);
  EXPECT_THROW(parse_operator("avgpool:q=2", s), std::invalid_argument);
  EXPECT_THROW(parse_operator("avgpool:s=x", s), std::invalid_argument);
  EXPECT_THROW(parse_operator("avgpool:s=3", s), std::invalid_argument);
  EXPECT_THROW(parse_operator("blur:sigma=1,k=4", s), std::invalid_argument);
}
