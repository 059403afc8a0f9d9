#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracle.h"
#include "unlearn/barycenter.h"
#include "unlearn/error.h"

using namespace unlearn;

namespace {

std::vector<double> Normal(std::mt19937_64& rng, int n, double mean, double sd) {
  std::normal_distribution<double> d(mean, sd);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

std::vector<double> Sorted(const PointCloud& c) {
  std::vector<double> v(c.points.data(), c.points.data() + c.size());
  std::sort(v.begin(), v.end());
  return v;
}

Matrix Points2d(std::mt19937_64& rng, int n, double cx, double cy) {
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix m(n, 2);
  for (int i = 0; i < n; ++i) {
    m(i, 0) = cx + d(rng);
    m(i, 1) = cy + 0.5 * d(rng);
  }
  return m;
}

}  // namespace

TEST(OtMap1d, EqualSizesPairOrderStatistics) {
  std::mt19937_64 rng(1);
  const auto x = Normal(rng, 50, 0.0, 1.0);
  const auto y = Normal(rng, 50, 5.0, 2.0);
  const TransportMap t = OtMap1d(PointCloud::FromValues(x), PointCloud::FromValues(y));
  auto sx = x;
  auto sy = y;
  std::sort(sx.begin(), sx.end());
  std::sort(sy.begin(), sy.end());
  for (int i = 0; i < 50; ++i) {
    Matrix q(1, 1);
    q(0, 0) = sx[i];
    EXPECT_EQ(t.Apply(q)(0, 0), sy[i]);
  }
  Matrix miss(1, 1);
  miss(0, 0) = 1e6;
  EXPECT_THROW(t.Apply(miss), Error);
}

TEST(OtMap1d, UnequalSizesProjectMonotoneCoupling) {
  const std::vector<double> x = {0.0, 1.0};
  const std::vector<double> y = {10.0, 20.0, 30.0};
  const TransportMap t = OtMap1d(PointCloud::FromValues(x), PointCloud::FromValues(y));
  // Source mass 1/2 each: first takes 1/3 of y0 and 1/6 of y1.
  EXPECT_NEAR(t.images(0, 0), (10.0 / 3 + 20.0 / 6) * 2, 1e-12);
  EXPECT_NEAR(t.images(1, 0), (20.0 / 6 + 30.0 / 3) * 2, 1e-12);
  const Coupling c = MonotoneCoupling1d(PointCloud::FromValues(x), PointCloud::FromValues(y));
  EXPECT_NEAR(c.plan.sum(), 1.0, 1e-15);
}

TEST(W2, OneDimensionalMatchesPermutationBruteForce) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const int n = 1 + t % 7;
    const auto a = Normal(rng, n, 0.0, 1.0);
    const auto b = Normal(rng, n, 1.0, 3.0);
    EXPECT_NEAR(W2Squared1d(PointCloud::FromValues(a), PointCloud::FromValues(b)),
                oracle::BruteForceW2Squared(a, b), 1e-12);
    const W2Estimate e = W2Distance(PointCloud::FromValues(a), PointCloud::FromValues(b));
    EXPECT_FALSE(e.approximate);
    EXPECT_NEAR(e.value * e.value, oracle::BruteForceW2Squared(a, b), 1e-12);
  }
}

TEST(W2, UnequalSizesAgainstReplication) {
  // Replicating each point of a 2-cloud three times and each point of a
  // 3-cloud twice gives equal-size clouds with the same measures.
  const std::vector<double> a = {0.0, 2.0};
  const std::vector<double> b = {-1.0, 1.0, 5.0};
  const std::vector<double> a6 = {0.0, 0.0, 0.0, 2.0, 2.0, 2.0};
  const std::vector<double> b6 = {-1.0, -1.0, 1.0, 1.0, 5.0, 5.0};
  EXPECT_NEAR(W2Squared1d(PointCloud::FromValues(a), PointCloud::FromValues(b)),
              oracle::BruteForceW2Squared(a6, b6), 1e-12);
}

TEST(Sinkhorn, MarginalsAndConvergenceError) {
  std::mt19937_64 rng(3);
  const PointCloud a = PointCloud::Uniform(Points2d(rng, 30, 0.0, 0.0));
  const PointCloud b = PointCloud::Uniform(Points2d(rng, 40, 3.0, 1.0));
  const Coupling c = SinkhornPlan(a, b);
  // Columns are matched exactly by the last half-step; rows up to tol in L1.
  double row_l1 = 0.0;
  for (int i = 0; i < a.size(); ++i) row_l1 += std::abs(c.plan.row(i).sum() - 1.0 / 30);
  EXPECT_LE(row_l1, SinkhornOptions{}.tol);
  for (int j = 0; j < b.size(); ++j) EXPECT_NEAR(c.plan.col(j).sum(), 1.0 / 40, 1e-12);
  SinkhornOptions strict;
  strict.reg_scale = 5e-2;
  strict.tol = 1e-12;
  const Coupling s = SinkhornPlan(a, b, strict);
  for (int i = 0; i < a.size(); ++i) EXPECT_NEAR(s.plan.row(i).sum(), 1.0 / 30, 1e-12);
  SinkhornOptions tight;
  tight.max_iter = 1;
  tight.reg_scale = 1e-4;
  try {
    SinkhornPlan(a, b, tight);
    FAIL();
  } catch (const NonConvergenceError& e) {
    EXPECT_GT(e.residual(), 0.0);
  }
}

TEST(Sinkhorn, SmallRegularisationApproachesExactOneDimensionalCost) {
  std::mt19937_64 rng(4);
  const auto x = Normal(rng, 25, 0.0, 1.0);
  const auto y = Normal(rng, 25, 2.0, 1.5);
  const PointCloud a = PointCloud::FromValues(x);
  const PointCloud b = PointCloud::FromValues(y);
  SinkhornOptions sharp;
  sharp.reg_scale = 5e-3;
  sharp.tol = 1e-6;
  sharp.max_iter = 50000;
  const Coupling c = SinkhornPlan(a, b, sharp);
  double cost = 0.0;
  for (int i = 0; i < 25; ++i) {
    for (int j = 0; j < 25; ++j) cost += c.plan(i, j) * (x[i] - y[j]) * (x[i] - y[j]);
  }
  const double exact = W2Squared1d(a, b);
  EXPECT_GE(cost, exact - 1e-9);
  EXPECT_LT(cost, exact * 1.05);
}

TEST(Barycenter, TwoGroupFixedPointIsOrderStatisticAverage) {
  std::mt19937_64 rng(5);
  const auto x = Normal(rng, 120, 0.0, 1.0);
  const auto y = Normal(rng, 120, 4.0, 0.5);
  const double w[] = {0.5, 0.5};
  const BarycenterResult r =
      FixedPointBarycenter({PointCloud::FromValues(x), PointCloud::FromValues(y)}, w);
  EXPECT_TRUE(r.converged);
  EXPECT_FALSE(r.approximate);
  auto sx = x;
  auto sy = y;
  std::sort(sx.begin(), sx.end());
  std::sort(sy.begin(), sy.end());
  const auto b = Sorted(r.barycenter);
  for (int i = 0; i < 120; ++i) EXPECT_NEAR(b[i], 0.5 * (sx[i] + sy[i]), 1e-9);
}

TEST(Barycenter, UnequalWeightsAndMidpoint) {
  std::mt19937_64 rng(6);
  const auto x = Normal(rng, 80, -1.0, 1.0);
  const auto y = Normal(rng, 80, 3.0, 2.0);
  const double w[] = {0.25, 0.75};
  const BarycenterResult r =
      FixedPointBarycenter({PointCloud::FromValues(x), PointCloud::FromValues(y)}, w);
  auto sx = x;
  auto sy = y;
  std::sort(sx.begin(), sx.end());
  std::sort(sy.begin(), sy.end());
  const auto b = Sorted(r.barycenter);
  for (int i = 0; i < 80; ++i) EXPECT_NEAR(b[i], 0.25 * sx[i] + 0.75 * sy[i], 1e-9);
  const PointCloud mid = MccannMidpoint(PointCloud::FromValues(x),
                                        OtMap1d(PointCloud::FromValues(x), PointCloud::FromValues(y)));
  const auto m = Sorted(mid);
  for (int i = 0; i < 80; ++i) EXPECT_NEAR(m[i], 0.5 * (sx[i] + sy[i]), 1e-12);
}

TEST(ExactPlan, MatchesPermutationBruteForce) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const int m = 2 + trial % 6;
    const PointCloud a = PointCloud::Uniform(Points2d(rng, m, 0.0, 0.0));
    const PointCloud b = PointCloud::Uniform(Points2d(rng, m, 1.0, -1.0));
    std::vector<int> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    double best = INFINITY;
    do {
      double c = 0.0;
      for (int i = 0; i < m; ++i) c += (a.points.row(i) - b.points.row(perm[i])).squaredNorm();
      best = std::min(best, c / m);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const W2Estimate e = W2Distance(a, b);
    EXPECT_FALSE(e.approximate);
    EXPECT_NEAR(e.value * e.value, best, 1e-12);
  }
}

TEST(ExactPlan, UnequalSizesHaveUniformMarginals) {
  std::mt19937_64 rng(12);
  const PointCloud a = PointCloud::Uniform(Points2d(rng, 6, 0.0, 0.0));
  const PointCloud b = PointCloud::Uniform(Points2d(rng, 4, 2.0, 0.0));
  const Coupling c = ExactUniformPlan(a, b);
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(c.plan.row(i).sum(), 1.0 / 6, 1e-15);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(c.plan.col(j).sum(), 1.0 / 4, 1e-15);
  // Never worse than the entropic plan.
  const Matrix cost = [&] {
    Matrix m(6, 4);
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 4; ++j) m(i, j) = (a.points.row(i) - b.points.row(j)).squaredNorm();
    }
    return m;
  }();
  EXPECT_LE(c.plan.cwiseProduct(cost).sum(),
            SinkhornPlan(a, b).plan.cwiseProduct(cost).sum() + 1e-9);
  EXPECT_THROW(ExactUniformPlan(PointCloud::FromValues(std::vector<double>{0.0}),
                                a),
               Error);
}

TEST(Barycenter, TwoDimensionalExactFixedPoint) {
  std::mt19937_64 rng(7);
  const PointCloud a = PointCloud::Uniform(Points2d(rng, 40, 0.0, 0.0));
  const PointCloud b = PointCloud::Uniform(Points2d(rng, 40, 4.0, 2.0));
  const double w[] = {0.5, 0.5};
  const BarycenterResult r = FixedPointBarycenter({a, b}, w);
  EXPECT_TRUE(r.converged);
  EXPECT_FALSE(r.approximate);
  const Eigen::RowVectorXd mean = r.barycenter.points.colwise().mean();
  EXPECT_NEAR(mean(0), 0.5 * (a.points.col(0).mean() + b.points.col(0).mean()), 1e-9);
  EXPECT_NEAR(mean(1), 0.5 * (a.points.col(1).mean() + b.points.col(1).mean()), 1e-9);
  // Exact fixed point of X = (T_a(X) + T_b(X)) / 2.
  const Matrix again = 0.5 * (EstimateMap(r.barycenter, a).images +
                              EstimateMap(r.barycenter, b).images);
  EXPECT_LE((again - r.barycenter.points).cwiseAbs().maxCoeff(), 1e-12);
  // The objective is non-convex; the fixed point need only come close to
  // the lower bound W2(a, b)^2 / 4.
  const double ab = std::pow(W2Distance(a, b).value, 2);
  const double da = std::pow(W2Distance(a, r.barycenter).value, 2);
  const double db = std::pow(W2Distance(b, r.barycenter).value, 2);
  EXPECT_GE(0.5 * (da + db), 0.25 * ab - 1e-9);
  EXPECT_LE(0.5 * (da + db), 0.25 * ab * 1.01);
}

TEST(Barycenter, EntropicFallbackIsFlaggedApproximate) {
  std::mt19937_64 rng(9);
  const PointCloud a = PointCloud::Uniform(Points2d(rng, 20, 0.0, 0.0));
  const PointCloud b = PointCloud::Uniform(Points2d(rng, 20, 4.0, 2.0));
  const double w[] = {0.5, 0.5};
  BarycenterOptions opt;
  opt.sinkhorn.exact_max_atoms = 0;
  opt.max_iter = 5;
  const BarycenterResult r = FixedPointBarycenter({a, b}, w, opt);
  EXPECT_TRUE(r.approximate);
  const Eigen::RowVectorXd mean = r.barycenter.points.colwise().mean();
  EXPECT_NEAR(mean(0), 0.5 * (a.points.col(0).mean() + b.points.col(0).mean()), 0.05);
}

TEST(Barycenter, Errors) {
  const std::vector<double> x = {0.0, 1.0};
  const double one[] = {1.0};
  const double bad[] = {0.7, 0.7};
  EXPECT_THROW(FixedPointBarycenter({PointCloud::FromValues(x)}, one), Error);
  EXPECT_THROW(FixedPointBarycenter({PointCloud::FromValues(x), PointCloud::FromValues(x)}, bad),
               Error);
}

TEST(Neutralize, ShiftedGroupsShareMeansAndIdenticalGroupsBarelyMove) {
  std::mt19937_64 rng(8);
  TabularDataset d;
  const int n = 100;
  d.features.resize(2 * n, 1);
  for (int i = 0; i < 2 * n; ++i) {
    d.features(i, 0) = (i < n ? 0.0 : 2.0) + Normal(rng, 1, 0.0, 1.0)[0];
    d.labels.push_back(0);
    d.groups.push_back(i < n ? 0 : 1);
  }
  const NeutralizeResult r = NeutralizeDataset(d);
  double m0 = 0.0;
  double m1 = 0.0;
  for (int i = 0; i < 2 * n; ++i) (i < n ? m0 : m1) += r.data.features(i, 0) / n;
  EXPECT_NEAR(m0, m1, 1e-6);
  EXPECT_EQ(r.data.groups, d.groups);
  EXPECT_EQ(r.orig_row.size(), static_cast<std::size_t>(2 * n));

  // Same values in both groups: neutralization is the identity.
  TabularDataset same = d;
  for (int i = 0; i < n; ++i) same.features(n + i, 0) = same.features(i, 0);
  const NeutralizeResult s = NeutralizeDataset(same);
  EXPECT_LT((s.data.features - same.features).cwiseAbs().maxCoeff(), 1e-9);

  TabularDataset one = d.Subset({0, 1, 2});
  EXPECT_THROW(NeutralizeDataset(one), Error);
}
