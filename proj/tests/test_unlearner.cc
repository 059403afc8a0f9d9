#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "gradcheck.h"
#include "oracle.h"
#include "unlearn/error.h"
#include "unlearn/harness.h"
#include "unlearn/unlearner.h"

using namespace unlearn;

namespace {

Matrix Rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(rows.size(), rows.begin()->size());
  int r = 0;
  for (const auto& row : rows) {
    int c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

double MeanCe(const Matrix& p, const std::vector<int>& y) {
  double s = 0.0;
  for (int i = 0; i < p.rows(); ++i) s -= std::log(p(i, y[i]));
  return s / p.rows();
}

CategoricalPMF ColumnMeanPmf(const Matrix& p) {
  std::vector<double> m(p.cols());
  for (int c = 0; c < p.cols(); ++c) m[c] = p.col(c).mean();
  return CategoricalPMF::Normalized(m);
}

EpochRecord Epoch(int e, double mi, double kd = 1.0, double acc = 1.0) {
  EpochRecord r;
  r.epoch = e;
  r.mi_margin = InfoValue::Nats(mi);
  r.kd = kd;
  r.unlearn_acc = acc;
  return r;
}

}  // namespace

TEST(MarginalPair, Examples) {
  const CategoricalPMF r({0.8, 0.2});
  const CategoricalPMF u({0.1, 0.9});
  const auto pair = BuildMarginalPair(r, u, 0.75);
  EXPECT_NEAR(pair.p0[0], 0.625, 1e-15);
  EXPECT_NEAR(pair.p0[1], 0.375, 1e-15);
  EXPECT_EQ(pair.p1[0], 0.8);
  const auto one = BuildMarginalPair(r, u, 1.0);
  EXPECT_EQ(TvDistance(one.p0, one.p1), 0.0);
  const auto same = BuildMarginalPair(r, r, 0.3);
  EXPECT_NEAR(TvDistance(same.p0, same.p1), 0.0, 1e-16);
  EXPECT_THROW(BuildMarginalPair(r, u, 0.0), Error);
  EXPECT_THROW(BuildMarginalPair(r, CategoricalPMF({0.2, 0.3, 0.5}), 0.5), Error);
}

TEST(MarginalMiLoss, DelegatesAndIsRelabelInvariant) {
  EXPECT_NEAR(MarginalMiLoss(CategoricalPMF({1.0, 0.0}), CategoricalPMF({0.0, 1.0})).nats(),
              std::numbers::ln2, 1e-15);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    const int k = 2 + t % 6;
    auto a = oracle::Dirichlet(rng, k, 1.0);
    auto b = oracle::Dirichlet(rng, k, 1.0);
    const double mi = MarginalMiLoss(CategoricalPMF(a), CategoricalPMF(b)).nats();
    EXPECT_EQ(mi, MutualInfoMixture(CategoricalPMF(a), CategoricalPMF(b), 0.5).nats());
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pa(k);
    std::vector<double> pb(k);
    for (int i = 0; i < k; ++i) {
      pa[i] = a[perm[i]];
      pb[i] = b[perm[i]];
    }
    EXPECT_NEAR(MarginalMiLoss(CategoricalPMF(pa), CategoricalPMF(pb)).nats(), mi, 1e-15);
  }
}

TEST(LossMarginal, RecomputationAndLimits) {
  const Matrix pr = Rows({{0.7, 0.2, 0.1}, {0.1, 0.8, 0.1}, {0.3, 0.3, 0.4}});
  const Matrix pu = Rows({{0.2, 0.2, 0.6}, {0.1, 0.1, 0.8}});
  const std::vector<int> yr = {0, 1, 2};
  const double alpha = 0.6;
  const PairLoss l = LossMarginal(pr, yr, pu, 0.3, alpha);
  const auto pair = BuildMarginalPair(ColumnMeanPmf(pr), ColumnMeanPmf(pu), alpha);
  const double mi = MutualInfoMixture(pair.p0, pair.p1, 0.5).nats();
  EXPECT_NEAR(l.utility, MeanCe(pr, yr), 1e-15);
  EXPECT_NEAR(l.reg, mi, 1e-15);
  EXPECT_NEAR(l.total, 0.7 * MeanCe(pr, yr) + 0.3 * mi, 1e-15);
  EXPECT_NEAR(LossMarginal(pr, yr, pu, 0.0, alpha).total, MeanCe(pr, yr), 1e-15);
  EXPECT_NEAR(LossMarginal(pr, yr, pr, 1.0, alpha).total, 0.0, 1e-15);
  const Matrix empty(0, 3);
  EXPECT_THROW(LossMarginal(empty, {}, pu, 0.3, alpha), Error);
}

TEST(LossGradDiff, RecomputationAndClamp) {
  const Matrix pr = Rows({{0.7, 0.3}, {0.4, 0.6}});
  const Matrix pu = Rows({{0.9, 0.1}, {1e-12, 1.0 - 1e-12}});
  const std::vector<int> yr = {0, 1};
  const std::vector<int> yu = {0, 0};
  const PairLoss l = LossGradDiff(pr, yr, pu, yu, 0.4, 20.0);
  // Second unlearn row has CE = 27.6 > 20 and is clamped.
  const double reg = -(-std::log(0.9) + 20.0) / 2.0;
  EXPECT_NEAR(l.reg, reg, 1e-12);
  EXPECT_NEAR(l.total, 0.6 * MeanCe(pr, yr) + 0.4 * reg, 1e-12);
  EXPECT_EQ(l.grad_unlearn(1, 0), 0.0);
  EXPECT_NEAR(LossGradDiff(pr, yr, pu, yu, 0.0).total, MeanCe(pr, yr), 1e-15);
  EXPECT_NEAR(LossGradDiff(pr, yr, pu, yu, 1.0).total, reg, 1e-12);
}

TEST(LossKlAnchor, RecomputationAndLimits) {
  const Matrix t = Rows({{0.6, 0.4}, {0.2, 0.8}});
  const Matrix s = Rows({{0.5, 0.5}, {0.3, 0.7}});
  const Matrix pu = Rows({{0.9, 0.1}});
  const std::vector<int> yu = {0};
  EXPECT_NEAR(LossKlAnchor(t, t, pu, yu, 0.0).total, 0.0, 1e-15);
  const double kl = 0.5 * (0.6 * std::log(0.6 / 0.5) + 0.4 * std::log(0.4 / 0.5) +
                           0.2 * std::log(0.2 / 0.3) + 0.8 * std::log(0.8 / 0.7));
  const PairLoss l = LossKlAnchor(t, s, pu, yu, 0.25);
  EXPECT_NEAR(l.utility, kl, 1e-15);
  EXPECT_NEAR(l.total, 0.75 * kl + 0.25 * std::log(0.9), 1e-15);
  EXPECT_GE(LossKlAnchor(t, s, pu, yu, 0.0).total, 0.0);
  EXPECT_THROW(LossKlAnchor(Rows({{0.5, 0.5}}), s, pu, yu, 0.2), Error);
}

TEST(FeatureMi, Examples) {
  const Matrix same = Rows({{0.3, 0.7}, {0.3, 0.7}, {0.3, 0.7}, {0.3, 0.7}});
  const std::vector<int> z = {0, 1, 0, 1};
  EXPECT_NEAR(FeatureMiLoss(same, z, 2).value.nats(), 0.0, 1e-16);
  const Matrix disjoint = Rows({{1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}, {0.0, 1.0}});
  EXPECT_NEAR(FeatureMiLoss(disjoint, z, 2).value.nats(), std::numbers::ln2, 1e-15);

  const Matrix p = Rows({{0.5, 0.3, 0.2}, {0.1, 0.1, 0.8}, {0.3, 0.4, 0.3},
                         {0.6, 0.2, 0.2}, {0.25, 0.5, 0.25}, {0.2, 0.2, 0.6}});
  const std::vector<int> g3 = {0, 1, 2, 0, 2, 2};
  std::vector<std::vector<double>> joint(3, std::vector<double>(3, 0.0));
  for (int i = 0; i < 6; ++i) {
    for (int c = 0; c < 3; ++c) joint[g3[i]][c] += p(i, c) / 6.0;
  }
  EXPECT_NEAR(FeatureMiLoss(p, g3, 3).value.nats(), oracle::JointMutualInfo(joint), 1e-14);

  const std::vector<int> missing = {0, 0, 2, 0, 2, 2};
  const FeatureMi skipped = FeatureMiLoss(p, missing, 3);
  EXPECT_TRUE(skipped.skipped_group);
  EXPECT_GE(skipped.value.nats(), 0.0);
}

TEST(Metrics, DpGapAndAccRand) {
  const std::vector<double> half = {0.5, 0.5, 0.5, 0.5};
  const std::vector<int> z = {0, 0, 1, 1};
  EXPECT_EQ(DpGap(half, z), 0.0);
  const Matrix flat = Rows({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}});
  const std::vector<int> y = {0, 1, 1, 0};
  EXPECT_EQ(AccRand(flat, y), 0.5);
  const Matrix onehot = Rows({{1, 0}, {0, 1}, {1, 0}, {1, 0}});
  EXPECT_EQ(AccRand(onehot, y), Accuracy(onehot, y));
  // Hand example.
  const Matrix p = Rows({{0.2, 0.8}, {0.6, 0.4}, {0.9, 0.1}, {0.3, 0.7}});
  const std::vector<double> p1 = {0.8, 0.4, 0.1, 0.7};
  EXPECT_NEAR(DpGap(p1, z), std::abs(0.6 - 0.4), 1e-15);
  EXPECT_NEAR(AccRand(p, y), (0.2 + 0.4 + 0.1 + 0.3) / 4, 1e-15);
  EXPECT_EQ(Accuracy(p, y), 0.0);
  const std::vector<int> single = {0, 0, 0, 0};
  EXPECT_THROW(DpGap(p1, single), Error);
}

TEST(EarlyStop, Examples) {
  EarlyStopRule rule;  // mi_ratio 0.85, patience 1
  TrainTrajectory t;
  t.baseline = Epoch(0, 1.0);
  t.epochs = {Epoch(1, 0.5)};
  EXPECT_TRUE(EarlyStopCheck(rule, t).stop);
  EXPECT_EQ(EarlyStopCheck(rule, t).epoch, 1);

  TrainTrajectory flat;
  flat.baseline = Epoch(0, 1.0);
  for (int e = 1; e <= 30; ++e) flat.epochs.push_back(Epoch(e, 1.0));
  EXPECT_FALSE(EarlyStopCheck(rule, flat).stop);

  EarlyStopRule two = rule;
  two.patience = 2;
  TrainTrajectory osc;
  osc.baseline = Epoch(0, 1.0);
  const double mis[] = {0.84, 0.86, 0.84, 0.86, 0.84, 0.84};
  int stop_at = -1;
  for (int e = 0; e < 6; ++e) {
    osc.epochs.push_back(Epoch(e + 1, mis[e]));
    if (stop_at < 0 && EarlyStopCheck(two, osc).stop) stop_at = e + 1;
  }
  EXPECT_EQ(stop_at, 6);
}

TEST(EarlyStop, KdAndChanceRules) {
  EarlyStopRule kd = EarlyStopRule::DefaultFor(Method::kKlAnchor);
  EXPECT_EQ(kd.kind, StopKind::kKdRatio);
  TrainTrajectory t;
  t.num_classes = 3;
  t.baseline = Epoch(0, 1.0, 0.9, 1.0);
  t.epochs = {Epoch(1, 1.0, 0.8, 1.0)};
  EXPECT_FALSE(EarlyStopCheck(kd, t).stop);
  t.epochs.push_back(Epoch(2, 1.0, 0.7, 1.0));
  EXPECT_TRUE(EarlyStopCheck(kd, t).stop);

  EarlyStopRule chance = EarlyStopRule::DefaultFor(Method::kGradDiff);
  EXPECT_EQ(chance.kind, StopKind::kChanceAccuracy);
  TrainTrajectory c;
  c.num_classes = 3;
  c.baseline = Epoch(0, 1.0, 1.0, 1.0);
  c.epochs = {Epoch(1, 1.0, 1.0, 0.3), Epoch(2, 1.0, 1.0, 0.36)};
  // Chance is 1/3 + margin; the 0.36 epoch breaks the run.
  ASSERT_EQ(chance.patience, 2);
  EXPECT_FALSE(EarlyStopCheck(chance, c).stop);
  c.epochs.push_back(Epoch(3, 1.0, 1.0, 0.34));
  EXPECT_FALSE(EarlyStopCheck(chance, c).stop);
  c.epochs.push_back(Epoch(4, 1.0, 1.0, 0.33));
  EXPECT_TRUE(EarlyStopCheck(chance, c).stop);
  EXPECT_EQ(StopKindFromString(ToString(StopKind::kChanceAccuracy)), StopKind::kChanceAccuracy);
  EXPECT_THROW(StopKindFromString("sometimes"), Error);
}

TEST(Method, Parsing) {
  EXPECT_EQ(MethodFromString("marginal"), Method::kMarginalMi);
  EXPECT_EQ(MethodFromString("grad_diff"), Method::kGradDiff);
  EXPECT_EQ(MethodFromString("kl_anchor"), Method::kKlAnchor);
  try {
    MethodFromString("retrain");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

namespace {

struct ToyTask {
  TabularDataset retain;
  TabularDataset unlearn;
  ModelParams start;
};

ToyTask MakeToy(std::uint64_t seed) {
  const TabularDataset all = MakeBlobs(3, 120, 2, 3.0, 0.8, seed);
  std::vector<int> keep;
  std::vector<int> drop;
  for (int i = 0; i < all.rows(); ++i) (all.labels[i] == 2 ? drop : keep).push_back(i);
  ToyTask t{all.Subset(keep), all.Subset(drop), {}};
  t.start = TrainErm(InitMlp(2, {8}, 3, seed), all, 15, 64, {1e-2, 0.9, 0.999, 1e-8, 1e-4}, seed);
  return t;
}

}  // namespace

TEST(TrainUnlearn, LambdaZeroDoesNotHurtRetainAccuracy) {
  const ToyTask toy = MakeToy(3);
  UnlearnConfig c;
  c.lambda = 0.0;
  c.epochs = 10;
  c.stop_rule.kind = StopKind::kNone;
  c.adam.lr = 1e-2;
  const UnlearnResult r = TrainUnlearn(c, toy.start, toy.retain, toy.unlearn);
  EXPECT_EQ(r.trajectory.epochs.size(), 10u);
  EXPECT_GE(r.trajectory.epochs.back().retain_acc, r.trajectory.baseline.retain_acc);
}

TEST(TrainUnlearn, StopRulePostconditionAndDeterminism) {
  const ToyTask toy = MakeToy(4);
  UnlearnConfig c;
  c.lambda = 0.5;
  c.adam.lr = 1e-2;
  const UnlearnResult r = TrainUnlearn(c, toy.start, toy.retain, toy.unlearn);
  ASSERT_TRUE(r.trajectory.stopped);
  const EpochRecord& last = r.trajectory.epochs.back();
  EXPECT_EQ(last.epoch, r.trajectory.stop_epoch);
  EXPECT_LE(last.mi_margin.nats(), 0.85 * r.trajectory.baseline.mi_margin.nats());
  EXPECT_TRUE(StopPredicate(c.stop_rule, r.trajectory, last));
  EXPECT_GE(r.trajectory.epochs.size(), 1u);
  EXPECT_NEAR(r.alpha, static_cast<double>(toy.retain.rows()) / (toy.retain.rows() + toy.unlearn.rows()),
              1e-15);

  const UnlearnResult again = TrainUnlearn(c, toy.start, toy.retain, toy.unlearn);
  EXPECT_EQ(again.params.Flatten(), r.params.Flatten());
}

TEST(TrainUnlearn, MinEpochsForcesOneEpoch) {
  const ToyTask toy = MakeToy(5);
  UnlearnConfig c;
  c.epochs = 1;
  c.stop_rule.threshold = 1.0;  // any epoch that does not raise the MI stops
  const UnlearnResult r = TrainUnlearn(c, toy.start, toy.retain, toy.unlearn);
  EXPECT_EQ(r.trajectory.epochs.size(), 1u);
}

TEST(TrainUnlearn, LambdaZeroIsPureUtilityForEveryMethod) {
  const ToyTask toy = MakeToy(6);
  UnlearnConfig c;
  c.lambda = 0.0;
  c.epochs = 3;
  c.stop_rule.kind = StopKind::kNone;
  c.method = Method::kMarginalMi;
  const UnlearnResult a = TrainUnlearn(c, toy.start, toy.retain, toy.unlearn);
  c.method = Method::kGradDiff;
  const UnlearnResult b = TrainUnlearn(c, toy.start, toy.retain, toy.unlearn);
  EXPECT_EQ(a.params.Flatten(), b.params.Flatten());
  for (std::size_t e = 0; e < a.trajectory.epochs.size(); ++e) {
    EXPECT_EQ(a.trajectory.epochs[e].loss_total, b.trajectory.epochs[e].loss_total);
    EXPECT_EQ(a.trajectory.epochs[e].loss_total, a.trajectory.epochs[e].loss_utility);
  }
}

TEST(TrainFeature, IndependentDataShrinksGapAndLambdaZeroIsErm) {
  // Y independent of Z, but Z visible in the features.
  TabularDataset d = MakeFeatureData(800, 0.0, 21);
  UnlearnConfig c;
  c.method = Method::kFeatureMi;
  c.epochs = 20;
  c.adam.lr = 1e-2;
  c.stop_rule.kind = StopKind::kNone;
  const ModelParams init = InitMlp(3, {8}, 2, 21);
  c.lambda = 1.0;
  const FeatureResult r = TrainFeature(c, init, d);
  EXPECT_LT(r.trajectory.epochs.back().dp_gap, r.trajectory.baseline.dp_gap);
  c.lambda = 0.0;
  const FeatureResult erm = TrainFeature(c, init, d);
  for (const FeatureRecord& f : erm.trajectory.epochs) EXPECT_EQ(f.loss_total, f.loss_utility);
}

TEST(TrainFeature, StrongerLambdaSmallerGap) {
  TabularDataset d = MakeFeatureData(1000, 0.6, 22);
  UnlearnConfig c;
  c.method = Method::kFeatureMi;
  c.epochs = 25;
  c.adam.lr = 1e-2;
  c.stop_rule.kind = StopKind::kNone;
  const ModelParams init = InitMlp(3, {8}, 2, 22);
  c.lambda = 0.1;
  const double low = TrainFeature(c, init, d).trajectory.epochs.back().dp_gap;
  c.lambda = 0.9;
  const double high = TrainFeature(c, init, d).trajectory.epochs.back().dp_gap;
  EXPECT_LT(high, low);
}

TEST(ScalarUnlearn, LambdaZeroMethodsCoincide) {
  // With no regularisation every method trains on the same utility loss.
  const ForgetGaussianSamples s = SampleForgetGaussian(3.0, 300, 300, 0.0, 0.5, 2);
  const Grid grid(-3.0, 3.0, 61);
  const KdeContext kde{grid, 0.2};
  const GridDensity tr = KdeOnGrid(s.retain, grid, 0.2);
  const GridDensity tu = KdeOnGrid(s.unlearn, grid, 0.2);
  const ModelParams init = InitResidualScalar({{16}, 3.0, 0.01}, 2);
  ScalarUnlearnConfig c;
  c.lambda = 0.0;
  c.steps = 30;
  c.method = Method::kMarginalMi;
  const ScalarResult a = TrainUnlearnScalar(c, init, s.retain, s.unlearn, kde, tr, tu);
  c.method = Method::kGradDiff;
  const ScalarResult b = TrainUnlearnScalar(c, init, s.retain, s.unlearn, kde, tr, tu);
  EXPECT_EQ(a.params.Flatten(), b.params.Flatten());
  ASSERT_EQ(a.records.size(), 31u);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].loss_utility, b.records[i].loss_utility);
  }
}

TEST(ScalarUnlearn, MarginalHalvesMiQuickly) {
  const ForgetGaussianSamples s = SampleForgetGaussian(3.0, 500, 500, 0.0, 0.5, 3);
  const Grid grid(-3.0, 3.0, 101);
  const KdeContext kde{grid, 0.2};
  const GridDensity tr = KdeOnGrid(s.retain, grid, 0.2);
  const GridDensity tu = KdeOnGrid(s.unlearn, grid, 0.2);
  const ModelParams init = InitResidualScalar({{32}, 3.0, 0.01}, 3);
  ScalarUnlearnConfig c;
  c.steps = 300;
  const ScalarResult r = TrainUnlearnScalar(c, init, s.retain, s.unlearn, kde, tr, tu);
  EXPECT_LE(r.records.back().mi_margin.nats(), 0.5 * r.records.front().mi_margin.nats());
}
