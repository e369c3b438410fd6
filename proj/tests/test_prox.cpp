#include "oracles.hpp"

#include "vibench/prox.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <limits>
#include <random>

using namespace vibench;

TEST(ProjectSimplex, ZeroVectorGoesToBarycenter) {
  const Vec p = project_simplex(Vec::Zero(3));
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(p[i], 1.0 / 3.0, 1e-15);
}

TEST(ProjectSimplex, FeasiblePointUnchanged) {
  const Vec v{{0.2, 0.3, 0.5}};
  EXPECT_LE((project_simplex(v) - v).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ProjectSimplex, TwoDimensionalExample) {
  const Vec v{{1.5, 0.5}};
  const Vec expected = oracle::project_simplex_sort(v);
  const Vec got = project_simplex(v);
  EXPECT_LE((got - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(got[0], 1.0, 1e-15);
  EXPECT_NEAR(got[1], 0.0, 1e-15);
}

TEST(ProjectSimplex, RejectsNonFinite) {
  EXPECT_THROW(project_simplex(Vec{{1.0, std::nan("")}}), InvalidArgument);
  EXPECT_THROW(project_simplex(Vec{{INFINITY, 0.0}}), InvalidArgument);
  EXPECT_THROW(project_simplex(Vec(0)), InvalidArgument);
}

TEST(ProjectSimplex, MatchesSortOracleAndIsIdempotent) {
  std::mt19937_64 gen(17);
  for (Index d : {1, 2, 3, 10, 57, 500}) {
    const SimplexDomain dom{d};
    for (int trial = 0; trial < 200; ++trial) {
      Vec v = oracle::gaussian_vector(d, gen);
      if (trial % 3 == 1) v *= 100.0;
      if (trial % 3 == 2) v *= 1e-3;
      const Vec p = project_simplex(v);
      EXPECT_LE((p - oracle::project_simplex_sort(v)).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_TRUE(dom.contains(p));
      // Re-projecting moves p by at most its residual mass error (plus a few ulps).
      const double slack = std::abs(p.sum() - 1.0) + 4.0 * std::numeric_limits<double>::epsilon();
      EXPECT_LE((project_simplex(p) - p).cwiseAbs().maxCoeff(), slack);
    }
  }
}

TEST(ProjectSimplex, TiesAndDuplicates) {
  const Vec v{{0.7, 0.7, 0.7, -5.0, 0.7}};
  const Vec p = project_simplex(v);
  EXPECT_LE((p - oracle::project_simplex_sort(v)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(p[3], 0.0, 0.0);
}

TEST(ProjectSimplex, NonExpansive) {
  std::mt19937_64 gen(23);
  for (int trial = 0; trial < 500; ++trial) {
    const Index d = 2 + trial % 40;
    const Vec u = oracle::gaussian_vector(d, gen) * 3.0;
    const Vec v = oracle::gaussian_vector(d, gen) * 3.0;
    EXPECT_LE((project_simplex(u) - project_simplex(v)).norm(), (u - v).norm() + 1e-12);
  }
}

TEST(ProjectSimplex, NormalConeInclusionAtVertices) {
  std::mt19937_64 gen(29);
  for (int trial = 0; trial < 300; ++trial) {
    const Index d = 2 + trial % 20;
    const Vec x = oracle::gaussian_vector(d, gen) * 2.0;
    const Vec y = project_simplex(x);
    for (Index i = 0; i < d; ++i) {
      Vec e = Vec::Zero(d);
      e[i] = 1.0;
      EXPECT_LE((x - y).dot(e - y), 1e-10);
    }
  }
}

TEST(SimplexIndicator, ProxPropertyAndValue) {
  const ProxFriendlyFunction g = simplex_indicator(4);
  std::mt19937_64 gen(31);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec x = oracle::gaussian_vector(4, gen);
    const double alpha = 0.5 + trial;
    const Vec y = g.prox_map(alpha, x);
    EXPECT_TRUE(g.domain_test(y));
    EXPECT_EQ(g.value(y), 0.0);
    // alpha g(u) >= alpha g(y) + <x - y, u - y> for u in dom g.
    const Vec u = project_simplex(oracle::gaussian_vector(4, gen));
    EXPECT_GE(alpha * g.value(u), alpha * g.value(y) + (x - y).dot(u - y) - 1e-10);
  }
  EXPECT_TRUE(std::isinf(g.value(Vec{{2.0, 0.0, 0.0, 0.0}})));
}

TEST(SimplexDomain, Membership) {
  const SimplexDomain dom{3};
  EXPECT_TRUE(dom.contains(Vec{{0.5, 0.5, 0.0}}));
  EXPECT_TRUE(dom.contains(Vec{{0.5, 0.5 + 5e-11, -5e-13}}));
  EXPECT_FALSE(dom.contains(Vec{{0.5, 0.5 + 1e-9, 0.0}}));
  EXPECT_FALSE(dom.contains(Vec{{1.0 + 1e-11, 0.0, -1e-11}}));
  EXPECT_FALSE(dom.contains(Vec{{0.5, 0.5}}));
  EXPECT_EQ(dom.center(), Vec::Constant(3, 1.0 / 3.0));
}

TEST(ProxIndicatorProduct, FeasibleBlocksUnchanged) {
  const std::array<SimplexDomain, 2> doms{SimplexDomain{2}, SimplexDomain{3}};
  const Vec x{{0.25, 0.75, 0.1, 0.2, 0.7}};
  EXPECT_LE((prox_indicator_product(doms, 1.0, x) - x).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ProxIndicatorProduct, IndependentOfAlpha) {
  const std::array<SimplexDomain, 2> doms{SimplexDomain{3}, SimplexDomain{3}};
  std::mt19937_64 gen(37);
  const Vec x = oracle::gaussian_vector(6, gen);
  EXPECT_EQ(prox_indicator_product(doms, 1.0, x), prox_indicator_product(doms, 100.0, x));
}

TEST(ProxIndicatorProduct, BlockwiseExample) {
  const std::array<SimplexDomain, 2> doms{SimplexDomain{2}, SimplexDomain{2}};
  const Vec x{{0.0, 0.0, 2.0, 0.0}};
  const Vec got = prox_indicator_product(doms, 1.0, x);
  Vec expected(4);
  expected << oracle::project_simplex_sort(Vec{{0.0, 0.0}}), oracle::project_simplex_sort(Vec{{2.0, 0.0}});
  EXPECT_LE((got - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((got - Vec{{0.5, 0.5, 1.0, 0.0}}).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ProxIndicatorProduct, Errors) {
  const std::array<SimplexDomain, 2> doms{SimplexDomain{2}, SimplexDomain{2}};
  EXPECT_THROW(prox_indicator_product(doms, 1.0, Vec::Zero(5)), InvalidArgument);
  EXPECT_THROW(prox_indicator_product(doms, 0.0, Vec::Zero(4)), InvalidArgument);
}

TEST(ProxZero, Identity) {
  std::mt19937_64 gen(41);
  const Vec x = oracle::gaussian_vector(7, gen);
  EXPECT_EQ(prox_zero(0.3, x), x);
  EXPECT_EQ(prox_zero(1e6, Vec::Zero(3)), Vec::Zero(3));
}

TEST(ProxResidual, Examples) {
  const FiniteSumProblem scalar(1, 1, [](Index, const Vec& x) { return x; }, {}, ProxFriendlyFunction::zero(),
                                LipschitzData::from_components(1.0, {1.0}));
  EXPECT_NEAR(prox_residual(scalar, Vec{{1.0}}, 0.1), 0.1, 1e-15);
  const FiniteSumProblem zero(3, 1, [](Index, const Vec&) { return Vec::Zero(3); }, {},
                              ProxFriendlyFunction::zero(), LipschitzData::from_components(0.0, {0.0}));
  EXPECT_EQ(prox_residual(zero, Vec{{1.0, -2.0, 3.0}}, 0.7), 0.0);
  EXPECT_THROW(prox_residual(scalar, Vec{{1.0}}, 0.0), InvalidArgument);
}
