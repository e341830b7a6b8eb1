// SPDX-License-Identifier: Apache-2.0
#include "karn/spline.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

namespace karn {
namespace {

TEST(MakeGrid, DegreeOneTwoIntervals) {
  const KnotGridd g = make_grid(1, 2, -1.0, 1.0);
  ASSERT_EQ(g.knots.size(), 5);
  const Eigen::VectorXd expected = (Eigen::VectorXd(5) << -2, -1, 0, 1, 2).finished();
  EXPECT_TRUE(g.knots.isApprox(expected, 1e-15));
  EXPECT_EQ(g.basis_count(), 3);
}

TEST(MakeGrid, DegreeTwoFourIntervals) {
  const KnotGridd g = make_grid(2, 4, -1.0, 1.0);
  ASSERT_EQ(g.knots.size(), 9);
  for (Eigen::Index i = 1; i < g.knots.size(); ++i) EXPECT_NEAR(g.knots[i] - g.knots[i - 1], 0.5, 1e-15);
  EXPECT_EQ(g.basis_count(), 6);
  EXPECT_NEAR(g.knots[2], -1.0, 1e-12);
  EXPECT_NEAR(g.knots[6], 1.0, 1e-12);
}

TEST(MakeGrid, TableMaxima) { EXPECT_EQ(make_grid(3, 14, 0.0, 1.0).basis_count(), 17); }

TEST(MakeGrid, RejectsBadArguments) {
  EXPECT_THROW(make_grid(2, 0, -1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(make_grid(2, 4, 1.0, -1.0), std::invalid_argument);
  EXPECT_THROW(make_grid(0, 4, -1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(make_grid(4, 4, -1.0, 1.0), std::invalid_argument);
}

TEST(CoxDeBoor, DegreeZeroIsIntervalIndicator) {
  const std::vector<double> knots{0.0, 1.0, 2.0, 3.0};
  const Eigen::VectorXd at1 = cox_de_boor<double>(knots, 0, 1.0);
  EXPECT_EQ(at1, (Eigen::VectorXd(3) << 0, 1, 0).finished());
  const Eigen::VectorXd mid = cox_de_boor<double>(knots, 0, 2.5);
  EXPECT_EQ(mid, (Eigen::VectorXd(3) << 0, 0, 1).finished());
  EXPECT_EQ(cox_de_boor<double>(knots, 0, 3.0).sum(), 0.0);
}

TEST(EvalBasis, MatchesSymbolicPiecewiseQuadratic) {
  const KnotGridd g = make_grid(2, 2, 0.0, 1.0);
  const test::PiecewiseBasisOracle oracle(test::uniform_knots(2, 2, 0.0, 1.0), 2);
  const Eigen::VectorXd row = eval_basis(g, 0.5);
  const Eigen::VectorXd expected = oracle.row(0.5);
  ASSERT_EQ(row.size(), 4);
  EXPECT_LT((row - expected).cwiseAbs().maxCoeff(), 1e-12);
  // Uniform quadratic at a knot: (0, 1/2, 1/2, 0)
  EXPECT_NEAR(row(1), 0.5, 1e-14);
  EXPECT_NEAR(row(2), 0.5, 1e-14);
}

TEST(EvalBasis, MatchesSymbolicOracleAcrossSmallGrids) {
  std::mt19937_64 rng(7);
  for (int p = 1; p <= 3; ++p) {
    for (int gcount = 1; gcount <= 6; ++gcount) {
      const KnotGridd g = make_grid(p, gcount, -1.0, 1.0);
      const std::vector<double> knots(g.knots.data(), g.knots.data() + g.knots.size());
      const test::PiecewiseBasisOracle oracle(knots, p);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (int n = 0; n < 50; ++n) {
        const double x = u(rng);
        EXPECT_LT((eval_basis(g, x) - oracle.row(x)).cwiseAbs().maxCoeff(), 1e-12) << p << " " << gcount;
      }
      EXPECT_LT((eval_basis(g, 1.0) - oracle.row(1.0, p + gcount - 1)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(EvalBasis, PartitionNonNegativityAndLocalSupport) {
  for (int p = 1; p <= 3; ++p) {
    for (int gcount = 2; gcount <= 14; ++gcount) {
      const KnotGridd g = make_grid(p, gcount, -1.0, 1.0);
      for (int n = 0; n <= 200; ++n) {
        const double x = -1.0 + 2.0 * n / 200.0;
        const Eigen::VectorXd row = eval_basis(g, x);
        EXPECT_NEAR(row.sum(), 1.0, 1e-10);
        EXPECT_GE(row.minCoeff(), 0.0);
        for (int i = 0; i < g.basis_count(); ++i)
          if (x < g.knots[i] || x > g.knots[i + p + 1]) EXPECT_EQ(row(i), 0.0);
      }
    }
  }
}

TEST(EvalBasis, ClampsOutOfRangeAndRejectsNan) {
  const KnotGridd g = make_grid(2, 5, -1.0, 1.0);
  EXPECT_EQ(eval_basis(g, 7.0), eval_basis(g, 1.0));
  EXPECT_EQ(eval_basis(g, -3.0), eval_basis(g, -1.0));
  EXPECT_THROW(eval_basis(g, std::nan("")), std::invalid_argument);
}

TEST(EvalBasisLocal, AgreesWithFullRecursion) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.3, 1.3);
  for (int p = 1; p <= 3; ++p) {
    const KnotGridd g = make_grid(p, 7, -1.0, 1.0);
    for (int n = 0; n < 300; ++n) {
      const double x = n == 0 ? 1.0 : (n == 1 ? -1.0 : u(rng));
      const Eigen::VectorXd full = eval_basis(g, x);
      const BasisWithDerivative<double> both = eval_basis_with_derivative(g, x);
      const LocalBasis<double> local = eval_basis_local(g, x);
      Eigen::VectorXd scattered = Eigen::VectorXd::Zero(g.basis_count());
      Eigen::VectorXd dscattered = Eigen::VectorXd::Zero(g.basis_count());
      for (int r = 0; r < local.count; ++r) {
        scattered(local.first + r) = local.values[static_cast<std::size_t>(r)];
        dscattered(local.first + r) = local.derivatives[static_cast<std::size_t>(r)];
      }
      EXPECT_LT((scattered - full).cwiseAbs().maxCoeff(), 1e-14);
      EXPECT_LT((dscattered - both.derivatives).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(EvalSpline, ConstantAndZeroCoefficients) {
  const KnotGridd g = make_grid(3, 6, -1.0, 1.0);
  const Eigen::VectorXd k = Eigen::VectorXd::Constant(g.basis_count(), 2.5);
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(g.basis_count());
  for (double x : {-1.0, -0.3, 0.0, 0.77, 1.0}) {
    EXPECT_NEAR(eval_spline(g, k, x), 2.5, 1e-12);
    EXPECT_EQ(eval_spline(g, z, x), 0.0);
  }
}

TEST(EvalSpline, HatFunctionPeak) {
  // Knots -0.5, 0, 0.5, 1, 1.5; B_1 is the hat on [0, 1]. At x = 0.5 the
  // degree-0 term B_2^0 is 1, so B_1^1 = (1 - 0.5) / (1 - 0.5) = 1.
  const KnotGridd g = make_grid(1, 2, 0.0, 1.0);
  const Eigen::Vector3d c(0.0, 1.0, 0.0);
  EXPECT_DOUBLE_EQ(eval_spline(g, c, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(eval_spline(g, c, 0.25), 0.5);
}

TEST(EvalSpline, RejectsLengthMismatch) {
  const KnotGridd g = make_grid(2, 4, -1.0, 1.0);
  EXPECT_THROW(eval_spline(g, Eigen::VectorXd::Zero(5), 0.0), std::invalid_argument);
}

TEST(EvalSpline, DerivativeMatchesCentralDifferences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int p = 2; p <= 3; ++p) {
    const KnotGridd g = make_grid(p, 5, -1.0, 1.0);
    Eigen::VectorXd c(g.basis_count());
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = u(rng);
    for (int n = 0; n < 100; ++n) {
      const double x = 0.98 * u(rng);
      bool near_knot = false;
      for (Eigen::Index i = 0; i < g.knots.size(); ++i) near_knot |= std::abs(x - g.knots[i]) < 1e-4;
      if (near_knot) continue;
      const double h = 1e-6;
      const double numeric = (eval_spline(g, c, x + h) - eval_spline(g, c, x - h)) / (2 * h);
      const double analytic = eval_spline_derivative(g, c, x);
      EXPECT_LT(std::abs(numeric - analytic) / (std::abs(analytic) + 1e-8), 1e-5);
    }
  }
  // Degree 1 is piecewise linear: exact slopes away from knots.
  const KnotGridd g1 = make_grid(1, 4, -1.0, 1.0);
  const Eigen::VectorXd c1 = (Eigen::VectorXd(5) << 0, 1, 3, 2, 2).finished();
  EXPECT_NEAR(eval_spline_derivative(g1, c1, -0.25), 4.0, 1e-12);
  EXPECT_EQ(eval_spline_derivative(g1, c1, 1.5), 0.0);
}

Eigen::VectorXd greville(const KnotGridd& g) {
  Eigen::VectorXd xi(g.basis_count());
  for (int i = 0; i < g.basis_count(); ++i) xi(i) = g.knots.segment(i + 1, g.degree).mean();
  return xi;
}

TEST(ExtendGrid, ConstantSplineStaysConstant) {
  const KnotGridd coarse = make_grid(2, 4, -1.0, 1.0);
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(coarse.basis_count(), -0.7);
  const auto ext = extend_grid(coarse, c, 8, uniform_probes(coarse));
  EXPECT_EQ(ext.grid.interior_count, 8);
  EXPECT_EQ(ext.coeffs.rows(), 10);
  EXPECT_LT((ext.coeffs.array() + 0.7).abs().maxCoeff(), 1e-10);
  EXPECT_LT(ext.max_residual, 1e-10);
  EXPECT_FALSE(ext.rank_deficient);
}

TEST(ExtendGrid, LinearFunctionIsReproduced) {
  // Coefficients at the Greville abscissae reproduce a*x + b exactly.
  const KnotGridd coarse = make_grid(2, 2, -1.0, 1.0);
  const Eigen::VectorXd c = (1.5 * greville(coarse)).array() - 0.25;
  const auto ext = extend_grid(coarse, c, 6, uniform_probes(coarse));
  for (int n = 0; n < 100; ++n) {
    const double x = -1.0 + 2.0 * n / 99.0;
    EXPECT_NEAR(eval_spline(coarse, c, x), 1.5 * x - 0.25, 1e-12);
    EXPECT_NEAR(eval_spline(ext.grid, Eigen::VectorXd(ext.coeffs.col(0)), x), 1.5 * x - 0.25, 1e-8);
  }
}

TEST(ExtendGrid, NestedRefinementReproducesRandomSpline) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int p = 1; p <= 3; ++p) {
    const KnotGridd coarse = make_grid(p, 4, -1.0, 1.0);
    Eigen::VectorXd c(coarse.basis_count());
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = u(rng);
    Eigen::VectorXd samples(300);
    for (Eigen::Index i = 0; i < samples.size(); ++i) samples(i) = u(rng);
    for (int fine : {8, 12}) {
      const auto ext = extend_grid(coarse, c, fine, samples);
      const Eigen::VectorXd fc = ext.coeffs.col(0);
      for (Eigen::Index i = 0; i < samples.size(); ++i)
        EXPECT_NEAR(eval_spline(ext.grid, fc, samples(i)), eval_spline(coarse, c, samples(i)), 1e-8);
    }
  }
}

TEST(ExtendGrid, NonNestedRefinementInterpolatesSquareSystem) {
  // 4 -> 10 intervals are not nested, so the fine space does not contain the
  // coarse spline. With exactly basis_count samples the fit interpolates.
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const KnotGridd coarse = make_grid(2, 4, -1.0, 1.0);
  Eigen::VectorXd c(coarse.basis_count());
  for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = u(rng);
  const KnotGridd fine = make_grid(2, 10, -1.0, 1.0);
  const Eigen::VectorXd samples = Eigen::VectorXd::LinSpaced(fine.basis_count(), -0.99, 0.99);
  const auto ext = extend_grid(coarse, c, 10, samples);
  EXPECT_FALSE(ext.rank_deficient);
  const Eigen::VectorXd fc = ext.coeffs.col(0);
  for (Eigen::Index i = 0; i < samples.size(); ++i)
    EXPECT_NEAR(eval_spline(ext.grid, fc, samples(i)), eval_spline(coarse, c, samples(i)), 1e-6);

  // With dense samples it is a least-squares approximation with small error.
  const auto dense = extend_grid(coarse, c, 10, uniform_probes(coarse));
  EXPECT_LT(dense.max_residual, 0.05 * c.cwiseAbs().maxCoeff());
}

TEST(ExtendGrid, RejectsInvalidRequests) {
  const KnotGridd coarse = make_grid(2, 4, -1.0, 1.0);
  const Eigen::VectorXd c = Eigen::VectorXd::Zero(coarse.basis_count());
  EXPECT_THROW(extend_grid(coarse, c, 4, uniform_probes(coarse)), std::invalid_argument);
  EXPECT_THROW(extend_grid(coarse, c, 8, Eigen::VectorXd()), std::invalid_argument);
  // 10 fine basis functions, only 5 distinct points.
  Eigen::VectorXd few(20);
  for (Eigen::Index i = 0; i < few.size(); ++i) few(i) = -0.8 + 0.4 * static_cast<double>(i % 5);
  EXPECT_THROW(extend_grid(coarse, c, 8, few), std::invalid_argument);
  EXPECT_THROW(extend_grid(coarse, c, 8, Eigen::VectorXd::Constant(20, 3.0)), std::invalid_argument);
  EXPECT_THROW(extend_grid(coarse, Eigen::VectorXd(Eigen::VectorXd::Zero(3)), 8, uniform_probes(coarse)), std::invalid_argument);
}

TEST(ExtendGrid, ClusteredSamplesFlagRankDeficiency) {
  const KnotGridd coarse = make_grid(2, 4, -1.0, 1.0);
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(coarse.basis_count(), 0.3);
  const Eigen::VectorXd samples = Eigen::VectorXd::LinSpaced(200, 0.0, 1.0);
  const auto ext = extend_grid(coarse, c, 8, samples);
  EXPECT_TRUE(ext.rank_deficient);
  EXPECT_LT(ext.rank, ext.grid.basis_count());
  EXPECT_LT(ext.max_residual, 1e-10);
}

}  // namespace
}  // namespace karn
