#include "unlearn/unlearner.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "unlearn/error.h"
#include "unlearn/logging.h"

namespace unlearn {
namespace {

double SafeLog(double x) { return std::log(std::max(x, kLogFloor)); }

// sum_z w_z KL(p_z || P), P = sum_z w_z p_z, with d/dp_z = w_z log(p_z / P).
// Components with zero weight contribute nothing and get zero gradient.
double GroupMi(const std::vector<std::vector<double>>& pz,
               const std::vector<double>& w, double cell,
               std::vector<std::vector<double>>* grads) {
  const std::size_t n = pz.front().size();
  std::vector<double> mix(n, 0.0);
  for (std::size_t z = 0; z < pz.size(); ++z) {
    for (std::size_t k = 0; k < n; ++k) mix[k] += w[z] * pz[z][k];
  }
  double value = 0.0;
  if (grads) grads->assign(pz.size(), std::vector<double>(n, 0.0));
  for (std::size_t z = 0; z < pz.size(); ++z) {
    if (w[z] == 0.0) continue;
    for (std::size_t k = 0; k < n; ++k) {
      const double r = SafeLog(pz[z][k]) - SafeLog(mix[k]);
      value += w[z] * pz[z][k] * r * cell;
      if (grads) (*grads)[z][k] = w[z] * r * cell;
    }
  }
  return std::max(0.0, value);
}

std::vector<double> ColumnMean(const Matrix& probs) {
  std::vector<double> mean(probs.cols(), 0.0);
  for (Eigen::Index c = 0; c < probs.cols(); ++c) {
    mean[c] = probs.col(c).sum() / static_cast<double>(probs.rows());
  }
  return mean;
}

void CheckBatch(const Matrix& probs, const char* which) {
  if (probs.rows() == 0) throw InvalidArgument(fmt::format("empty {} batch", which));
}

void CheckLambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw InvalidArgument("lambda must lie in [0, 1]");
  }
}

// Mean cross-entropy of labelled probability rows; adds scale * gradient.
double CrossEntropyRows(const Matrix& probs, std::span<const int> labels,
                        double scale, Matrix* grad) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows()) {
    throw InvalidArgument("label count does not match batch");
  }
  const double n = static_cast<double>(probs.rows());
  double ce = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= probs.cols()) throw InvalidArgument("label out of range");
    const double p = probs(i, y);
    ce -= SafeLog(p);
    if (grad && p > kLogFloor) (*grad)(i, y) += scale * (-1.0 / (n * p));
  }
  return ce / n;
}

// -mean_i min(CE_i, c_max); adds scale * gradient.
double NegCappedCrossEntropy(const Matrix& probs, std::span<const int> labels,
                             double c_max, double scale, Matrix* grad) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows()) {
    throw InvalidArgument("label count does not match batch");
  }
  const double n = static_cast<double>(probs.rows());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= probs.cols()) throw InvalidArgument("label out of range");
    const double p = probs(i, y);
    const double ce = -SafeLog(p);
    if (ce < c_max) {
      sum += ce;
      if (grad && p > kLogFloor) (*grad)(i, y) += scale * (1.0 / (n * p));
    } else {
      sum += c_max;
    }
  }
  return -sum / n;
}

// -sum_k t_k log p_k dx and its gradient in p.
double GridCrossEntropy(const GridDensity& target, const GridDensity& p,
                        double scale, std::vector<double>* dp) {
  const double dx = p.grid().dx();
  double value = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double t = target[k];
    if (t == 0.0) continue;
    value -= t * SafeLog(p[k]) * dx;
    if (dp && p[k] > kLogFloor) (*dp)[k] += scale * (-t / p[k] * dx);
  }
  return value;
}

double GridNegEntropy(const GridDensity& t) {
  double v = 0.0;
  for (double x : t.values()) {
    if (x > 0.0) v += x * std::log(x);
  }
  return v * t.grid().dx();
}

void CheckMatchingTarget(const GridDensity& target, const KdeContext& kde) {
  if (!(target.grid() == kde.grid)) {
    throw InvalidArgument("target density grid does not match loss grid");
  }
}

double ResolveAlpha(double alpha, std::size_t n_r, std::size_t n_u) {
  if (alpha > 0.0) return alpha;
  return static_cast<double>(n_r) / static_cast<double>(n_r + n_u);
}

Matrix Rows(const Matrix& m, const std::vector<int>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  }
  return out;
}

std::vector<int> Pick(const std::vector<int>& v, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(v[i]);
  return out;
}

Matrix ColumnOf(std::span<const double> x) {
  Matrix m(static_cast<Eigen::Index>(x.size()), 1);
  for (std::size_t i = 0; i < x.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = x[i];
  return m;
}

Matrix ColumnGradient(const std::vector<double>& g) {
  return ColumnOf(std::span<const double>(g));
}

std::string Num(double x) { return fmt::format("{}", x); }

}  // namespace

std::string ToString(Method method) {
  switch (method) {
    case Method::kMarginalMi:
      return "marginal";
    case Method::kGradDiff:
      return "grad_diff";
    case Method::kKlAnchor:
      return "kl_anchor";
    case Method::kFeatureMi:
      return "feature_mi";
  }
  return "unknown";
}

Method MethodFromString(const std::string& text) {
  if (text == "marginal" || text == "marginal_mi") return Method::kMarginalMi;
  if (text == "grad_diff") return Method::kGradDiff;
  if (text == "kl_anchor" || text == "kl") return Method::kKlAnchor;
  if (text == "feature_mi") return Method::kFeatureMi;
  throw ConfigError("unknown method '" + text + "'");
}

MarginalPair<CategoricalPMF> BuildMarginalPair(const CategoricalPMF& retain,
                                               const CategoricalPMF& unlearn,
                                               double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw InvalidArgument("alpha must lie in (0, 1]");
  }
  const CategoricalPMF parts[] = {retain, unlearn};
  const double w[] = {alpha, 1.0 - alpha};
  return {Mixture(parts, w), retain};
}

MarginalPair<GridDensity> BuildMarginalPair(const GridDensity& retain,
                                            const GridDensity& unlearn,
                                            double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw InvalidArgument("alpha must lie in (0, 1]");
  }
  const GridDensity parts[] = {retain, unlearn};
  const double w[] = {alpha, 1.0 - alpha};
  return {Mixture(parts, w), retain};
}

InfoValue MarginalMiLoss(const CategoricalPMF& p0, const CategoricalPMF& p1,
                         double prior) {
  return MutualInfoMixture(p0, p1, prior);
}

InfoValue MarginalMiLoss(const GridDensity& p0, const GridDensity& p1,
                         double prior) {
  return MutualInfoMixture(p0, p1, prior);
}

CategoricalPMF MeanPmf(const Matrix& probs) {
  if (probs.rows() == 0) throw InvalidArgument("mean of an empty batch");
  return CategoricalPMF::Normalized(ColumnMean(probs));
}

PairLoss LossMarginal(const Matrix& probs_r, std::span<const int> labels_r,
                      const Matrix& probs_u, double lambda, double alpha,
                      double prior) {
  CheckBatch(probs_r, "retain");
  CheckBatch(probs_u, "unlearn");
  CheckLambda(lambda);
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in (0, 1]");
  if (!(prior > 0.0 && prior < 1.0)) throw InvalidArgument("prior must lie in (0, 1)");
  if (probs_r.cols() != probs_u.cols()) throw InvalidArgument("class count mismatch");
  PairLoss out;
  out.grad_retain = Matrix::Zero(probs_r.rows(), probs_r.cols());
  out.grad_unlearn = Matrix::Zero(probs_u.rows(), probs_u.cols());
  out.utility = CrossEntropyRows(probs_r, labels_r, 1.0 - lambda, &out.grad_retain);

  const std::vector<double> mean_r = ColumnMean(probs_r);
  const std::vector<double> mean_u = ColumnMean(probs_u);
  std::vector<double> p0(mean_r.size());
  for (std::size_t k = 0; k < p0.size(); ++k) {
    p0[k] = alpha * mean_r[k] + (1.0 - alpha) * mean_u[k];
  }
  std::vector<std::vector<double>> g;
  out.reg = GroupMi({mean_r, p0}, {prior, 1.0 - prior}, 1.0, &g);
  const double nr = static_cast<double>(probs_r.rows());
  const double nu = static_cast<double>(probs_u.rows());
  for (Eigen::Index c = 0; c < probs_r.cols(); ++c) {
    const double dr = lambda * (g[0][c] + alpha * g[1][c]) / nr;
    const double du = lambda * (1.0 - alpha) * g[1][c] / nu;
    out.grad_retain.col(c).array() += dr;
    out.grad_unlearn.col(c).array() += du;
  }
  out.total = (1.0 - lambda) * out.utility + lambda * out.reg;
  return out;
}

PairLoss LossGradDiff(const Matrix& probs_r, std::span<const int> labels_r,
                      const Matrix& probs_u, std::span<const int> labels_u,
                      double lambda, double c_max) {
  CheckBatch(probs_r, "retain");
  CheckBatch(probs_u, "unlearn");
  CheckLambda(lambda);
  PairLoss out;
  out.grad_retain = Matrix::Zero(probs_r.rows(), probs_r.cols());
  out.grad_unlearn = Matrix::Zero(probs_u.rows(), probs_u.cols());
  out.utility = CrossEntropyRows(probs_r, labels_r, 1.0 - lambda, &out.grad_retain);
  out.reg = NegCappedCrossEntropy(probs_u, labels_u, c_max, lambda, &out.grad_unlearn);
  out.total = (1.0 - lambda) * out.utility + lambda * out.reg;
  return out;
}

PairLoss LossKlAnchor(const Matrix& teacher_r, const Matrix& probs_r,
                      const Matrix& probs_u, std::span<const int> labels_u,
                      double lambda, double c_max) {
  CheckBatch(probs_r, "retain");
  CheckBatch(probs_u, "unlearn");
  CheckLambda(lambda);
  if (teacher_r.rows() != probs_r.rows() || teacher_r.cols() != probs_r.cols()) {
    throw InvalidArgument("teacher outputs do not match student outputs");
  }
  PairLoss out;
  out.grad_retain = Matrix::Zero(probs_r.rows(), probs_r.cols());
  out.grad_unlearn = Matrix::Zero(probs_u.rows(), probs_u.cols());
  const double n = static_cast<double>(probs_r.rows());
  double kl = 0.0;
  for (Eigen::Index i = 0; i < probs_r.rows(); ++i) {
    for (Eigen::Index c = 0; c < probs_r.cols(); ++c) {
      const double t = teacher_r(i, c);
      if (t == 0.0) continue;
      const double s = probs_r(i, c);
      kl += t * (std::log(t) - SafeLog(s));
      if (s > kLogFloor) out.grad_retain(i, c) += (1.0 - lambda) * (-t / (s * n));
    }
  }
  out.utility = std::max(0.0, kl / n);
  out.reg = NegCappedCrossEntropy(probs_u, labels_u, c_max, lambda, &out.grad_unlearn);
  out.total = (1.0 - lambda) * out.utility + lambda * out.reg;
  return out;
}

namespace {

struct GroupMeans {
  std::vector<std::vector<double>> means;
  std::vector<double> weights;
  std::vector<int> counts;
  bool skipped = false;
};

GroupMeans MeansByGroup(const Matrix& probs, std::span<const int> groups,
                        int num_groups) {
  if (static_cast<Eigen::Index>(groups.size()) != probs.rows()) {
    throw InvalidArgument("group count does not match batch");
  }
  GroupMeans g;
  g.means.assign(num_groups, std::vector<double>(probs.cols(), 0.0));
  g.counts.assign(num_groups, 0);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int z = groups[i];
    if (z < 0 || z >= num_groups) throw InvalidArgument("group index out of range");
    ++g.counts[z];
    for (Eigen::Index c = 0; c < probs.cols(); ++c) g.means[z][c] += probs(i, c);
  }
  g.weights.assign(num_groups, 0.0);
  for (int z = 0; z < num_groups; ++z) {
    if (g.counts[z] == 0) {
      g.skipped = true;
      continue;
    }
    for (double& v : g.means[z]) v /= g.counts[z];
    g.weights[z] = static_cast<double>(g.counts[z]) / probs.rows();
  }
  return g;
}

}  // namespace

FeatureMi FeatureMiLoss(const Matrix& probs, std::span<const int> groups,
                        int num_groups) {
  CheckBatch(probs, "feature");
  const GroupMeans g = MeansByGroup(probs, groups, num_groups);
  return {InfoValue::Nats(GroupMi(g.means, g.weights, 1.0, nullptr)), g.skipped};
}

FeatureLoss LossFeatureMi(const Matrix& probs, std::span<const int> labels,
                          std::span<const int> groups, int num_groups,
                          double lambda) {
  CheckBatch(probs, "feature");
  CheckLambda(lambda);
  FeatureLoss out;
  out.grad = Matrix::Zero(probs.rows(), probs.cols());
  out.utility = CrossEntropyRows(probs, labels, 1.0 - lambda, &out.grad);
  const GroupMeans g = MeansByGroup(probs, groups, num_groups);
  out.skipped_group = g.skipped;
  std::vector<std::vector<double>> grads;
  out.reg = GroupMi(g.means, g.weights, 1.0, &grads);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int z = groups[i];
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      out.grad(i, c) += lambda * grads[z][c] / g.counts[z];
    }
  }
  out.total = (1.0 - lambda) * out.utility + lambda * out.reg;
  return out;
}

ScalarPairLoss KdeLossMarginal(std::span<const double> out_r,
                               std::span<const double> out_u,
                               const KdeContext& kde,
                               const GridDensity& target_r, double lambda,
                               double alpha, double prior) {
  CheckLambda(lambda);
  CheckMatchingTarget(target_r, kde);
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in (0, 1]");
  if (!(prior > 0.0 && prior < 1.0)) throw InvalidArgument("prior must lie in (0, 1)");
  const GridDensity pr = KdeOnGrid(out_r, kde.grid, kde.bandwidth);
  const GridDensity pu = KdeOnGrid(out_u, kde.grid, kde.bandwidth);
  const int n = kde.grid.size();
  std::vector<double> dr(n, 0.0);
  std::vector<double> du(n, 0.0);
  ScalarPairLoss out;
  out.utility = GridCrossEntropy(target_r, pr, 1.0 - lambda, &dr);
  std::vector<double> p1(pr.values().begin(), pr.values().end());
  std::vector<double> p0(n);
  for (int k = 0; k < n; ++k) p0[k] = alpha * pr[k] + (1.0 - alpha) * pu[k];
  std::vector<std::vector<double>> g;
  out.reg = GroupMi({p1, p0}, {prior, 1.0 - prior}, kde.grid.dx(), &g);
  for (int k = 0; k < n; ++k) {
    dr[k] += lambda * (g[0][k] + alpha * g[1][k]);
    du[k] += lambda * (1.0 - alpha) * g[1][k];
  }
  out.total = (1.0 - lambda) * out.utility + lambda * out.reg;
  out.grad_retain = KdeAdjoint(out_r, kde.grid, kde.bandwidth, dr);
  out.grad_unlearn = KdeAdjoint(out_u, kde.grid, kde.bandwidth, du);
  return out;
}

namespace {

ScalarPairLoss KdeAscentPair(std::span<const double> out_r,
                             std::span<const double> out_u,
                             const KdeContext& kde, const GridDensity& anchor_r,
                             bool anchor_is_kl, const GridDensity& target_u,
                             double lambda, double c_max) {
  CheckLambda(lambda);
  CheckMatchingTarget(anchor_r, kde);
  CheckMatchingTarget(target_u, kde);
  const GridDensity pr = KdeOnGrid(out_r, kde.grid, kde.bandwidth);
  const GridDensity pu = KdeOnGrid(out_u, kde.grid, kde.bandwidth);
  const int n = kde.grid.size();
  std::vector<double> dr(n, 0.0);
  std::vector<double> du(n, 0.0);
  ScalarPairLoss out;
  out.utility = GridCrossEntropy(anchor_r, pr, 1.0 - lambda, &dr);
  if (anchor_is_kl) out.utility = std::max(0.0, out.utility + GridNegEntropy(anchor_r));
  std::vector<double> du_raw(n, 0.0);
  const double ce_u = GridCrossEntropy(target_u, pu, 1.0, &du_raw);
  if (ce_u < c_max) {
    out.reg = -ce_u;
    for (int k = 0; k < n; ++k) du[k] = -lambda * du_raw[k];
  } else {
    out.reg = -c_max;
  }
  out.total = (1.0 - lambda) * out.utility + lambda * out.reg;
  out.grad_retain = KdeAdjoint(out_r, kde.grid, kde.bandwidth, dr);
  out.grad_unlearn = KdeAdjoint(out_u, kde.grid, kde.bandwidth, du);
  return out;
}

}  // namespace

ScalarPairLoss KdeLossGradDiff(std::span<const double> out_r,
                               std::span<const double> out_u,
                               const KdeContext& kde,
                               const GridDensity& target_r,
                               const GridDensity& target_u, double lambda,
                               double c_max) {
  return KdeAscentPair(out_r, out_u, kde, target_r, false, target_u, lambda, c_max);
}

ScalarPairLoss KdeLossKlAnchor(std::span<const double> out_r,
                               std::span<const double> out_u,
                               const KdeContext& kde,
                               const GridDensity& anchor_r,
                               const GridDensity& target_u, double lambda,
                               double c_max) {
  return KdeAscentPair(out_r, out_u, kde, anchor_r, true, target_u, lambda, c_max);
}

ScalarFeatureLoss KdeLossFeatureMi(std::span<const double> outputs,
                                   std::span<const int> groups, int num_groups,
                                   const KdeContext& kde,
                                   const GridDensity& target, double lambda) {
  CheckLambda(lambda);
  CheckMatchingTarget(target, kde);
  if (outputs.empty()) throw InvalidArgument("empty feature batch");
  if (groups.size() != outputs.size()) {
    throw InvalidArgument("group count does not match batch");
  }
  const int n = kde.grid.size();
  ScalarFeatureLoss out;
  const GridDensity all = KdeOnGrid(outputs, kde.grid, kde.bandwidth);
  std::vector<double> d_all(n, 0.0);
  out.utility = GridCrossEntropy(target, all, 1.0 - lambda, &d_all);
  out.grad = KdeAdjoint(outputs, kde.grid, kde.bandwidth, d_all);

  std::vector<std::vector<double>> members(num_groups);
  std::vector<std::vector<std::size_t>> rows(num_groups);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const int z = groups[i];
    if (z < 0 || z >= num_groups) throw InvalidArgument("group index out of range");
    members[z].push_back(outputs[i]);
    rows[z].push_back(i);
  }
  std::vector<std::vector<double>> dens(num_groups, std::vector<double>(n, 0.0));
  std::vector<double> w(num_groups, 0.0);
  for (int z = 0; z < num_groups; ++z) {
    if (members[z].empty()) {
      out.skipped_group = true;
      continue;
    }
    const GridDensity pz = KdeOnGrid(members[z], kde.grid, kde.bandwidth);
    dens[z].assign(pz.values().begin(), pz.values().end());
    w[z] = static_cast<double>(members[z].size()) / outputs.size();
  }
  std::vector<std::vector<double>> g;
  out.reg = GroupMi(dens, w, kde.grid.dx(), &g);
  for (int z = 0; z < num_groups; ++z) {
    if (members[z].empty()) continue;
    for (double& v : g[z]) v *= lambda;
    const std::vector<double> gz =
        KdeAdjoint(members[z], kde.grid, kde.bandwidth, g[z]);
    for (std::size_t j = 0; j < rows[z].size(); ++j) out.grad[rows[z][j]] += gz[j];
  }
  out.total = (1.0 - lambda) * out.utility + lambda * out.reg;
  return out;
}

double DpGap(std::span<const double> class1_probs, std::span<const int> groups) {
  if (class1_probs.size() != groups.size()) {
    throw InvalidArgument("dp_gap: length mismatch");
  }
  std::vector<double> sum;
  std::vector<int> count;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const int z = groups[i];
    if (z < 0) throw InvalidArgument("dp_gap: negative group");
    if (z >= static_cast<int>(sum.size())) {
      sum.resize(z + 1, 0.0);
      count.resize(z + 1, 0);
    }
    sum[z] += class1_probs[i];
    ++count[z];
  }
  double lo = INFINITY;
  double hi = -INFINITY;
  int present = 0;
  for (std::size_t z = 0; z < sum.size(); ++z) {
    if (count[z] == 0) continue;
    ++present;
    const double mean = sum[z] / count[z];
    lo = std::min(lo, mean);
    hi = std::max(hi, mean);
  }
  if (present < 2) throw InvalidArgument("dp_gap needs at least two groups");
  return hi - lo;
}

double AccRand(const Matrix& probs, std::span<const int> labels) {
  if (probs.rows() == 0 || static_cast<Eigen::Index>(labels.size()) != probs.rows()) {
    throw InvalidArgument("acc_rand: label count does not match rows");
  }
  double s = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) s += probs(i, labels[i]);
  return s / probs.rows();
}

std::vector<int> ArgmaxRows(const Matrix& probs) {
  std::vector<int> out(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index arg = 0;
    probs.row(i).maxCoeff(&arg);
    out[i] = static_cast<int>(arg);
  }
  return out;
}

double Accuracy(const Matrix& probs, std::span<const int> labels) {
  if (probs.rows() == 0 || static_cast<Eigen::Index>(labels.size()) != probs.rows()) {
    throw InvalidArgument("accuracy: label count does not match rows");
  }
  const std::vector<int> pred = ArgmaxRows(probs);
  int hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / pred.size();
}

std::string ToString(StopKind kind) {
  switch (kind) {
    case StopKind::kNone:
      return "none";
    case StopKind::kMiRatio:
      return "mi_ratio";
    case StopKind::kKdRatio:
      return "kd_ratio";
    case StopKind::kChanceAccuracy:
      return "chance_accuracy";
  }
  return "unknown";
}

StopKind StopKindFromString(const std::string& text) {
  if (text == "none") return StopKind::kNone;
  if (text == "mi_ratio") return StopKind::kMiRatio;
  if (text == "kd_ratio") return StopKind::kKdRatio;
  if (text == "chance_accuracy") return StopKind::kChanceAccuracy;
  throw ConfigError("unknown stop rule '" + text + "'");
}

EarlyStopRule EarlyStopRule::DefaultFor(Method method) {
  EarlyStopRule rule;
  switch (method) {
    case Method::kMarginalMi:
      rule.kind = StopKind::kMiRatio;
      break;
    case Method::kKlAnchor:
      rule.kind = StopKind::kKdRatio;
      break;
    case Method::kGradDiff:
      rule.kind = StopKind::kChanceAccuracy;
      rule.patience = 2;
      break;
    case Method::kFeatureMi:
      rule.kind = StopKind::kNone;
      break;
  }
  return rule;
}

void EarlyStopRule::Validate() const {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw ConfigError("stop threshold must lie in (0, 1]");
  }
  if (patience < 1) throw ConfigError("stop patience must be >= 1");
  if (min_epochs < 0) throw ConfigError("min_epochs must be >= 0");
  if (!(margin >= 0.0)) throw ConfigError("stop margin must be >= 0");
}

bool StopPredicate(const EarlyStopRule& rule, const TrainTrajectory& trajectory,
                   const EpochRecord& record) {
  switch (rule.kind) {
    case StopKind::kNone:
      return false;
    case StopKind::kMiRatio:
      return record.mi_margin.nats() <=
             rule.threshold * trajectory.baseline.mi_margin.nats();
    case StopKind::kKdRatio:
      return record.kd <= rule.threshold * trajectory.baseline.kd;
    case StopKind::kChanceAccuracy:
      return record.unlearn_acc <= 1.0 / trajectory.num_classes + rule.margin;
  }
  return false;
}

StopDecision EarlyStopCheck(const EarlyStopRule& rule,
                            const TrainTrajectory& trajectory) {
  const int n = static_cast<int>(trajectory.epochs.size());
  if (n == 0 || n < rule.min_epochs || n < rule.patience) return {};
  for (int i = n - rule.patience; i < n; ++i) {
    if (!StopPredicate(rule, trajectory, trajectory.epochs[i])) return {};
  }
  return {true, trajectory.epochs.back().epoch};
}

void WriteTrajectoryCsv(const TrainTrajectory& trajectory,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "epoch,retain_acc,unlearn_acc,mi_margin_nats,mi_binned_nats,kd,"
         "loss_total,loss_utility,loss_reg\n";
  auto row = [&](const EpochRecord& r) {
    out << r.epoch << ',' << Num(r.retain_acc) << ',' << Num(r.unlearn_acc)
        << ',' << Num(r.mi_margin.nats()) << ',' << Num(r.mi_binned.nats())
        << ',' << Num(r.kd) << ',' << Num(r.loss_total) << ','
        << Num(r.loss_utility) << ',' << Num(r.loss_reg) << '\n';
  };
  row(trajectory.baseline);
  for (const EpochRecord& r : trajectory.epochs) row(r);
}

void UnlearnConfig::Validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (alpha > 1.0) throw ConfigError("alpha must lie in (0, 1]");
  if (!(prior > 0.0 && prior < 1.0)) throw ConfigError("prior must lie in (0, 1)");
  if (!(c_max > 0.0)) throw ConfigError("c_max must be positive");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("holdout_fraction must lie in (0, 1)");
  }
  stop_rule.Validate();
}

namespace {

struct SplitData {
  TabularDataset train;
  TabularDataset val;
};

SplitData SplitByLabel(const TabularDataset& data, double fraction,
                       std::uint64_t seed, bool by_group) {
  auto [train, held] =
      StratifiedSplit(by_group ? data.groups : data.labels, fraction, seed);
  SplitData s{data.Subset(train), data.Subset(held)};
  if (s.val.rows() == 0) s.val = data;
  if (s.train.rows() == 0) s.train = data;
  return s;
}

void CheckClassifier(const ModelParams& params, const TabularDataset& data,
                     const char* which) {
  if (params.arch != Architecture::kMlp) {
    throw InvalidArgument("classifier training needs a softmax model");
  }
  if (data.rows() == 0) throw DataError(fmt::format("{} set is empty", which));
  if (data.dim() != params.input_dim()) {
    throw DataError(fmt::format("{} set has {} features, model expects {}",
                                which, data.dim(), params.input_dim()));
  }
  for (int y : data.labels) {
    if (y >= params.output_dim()) {
      throw DataError(fmt::format("{} set label {} exceeds model classes {}",
                                  which, y, params.output_dim()));
    }
  }
}

EpochRecord Evaluate(const ModelParams& params, const ModelParams& teacher,
                     const SplitData& r, const SplitData& u, double alpha,
                     double prior) {
  const Matrix pr = Forward(params, r.val.features).outputs;
  const Matrix pu = Forward(params, u.val.features).outputs;
  EpochRecord rec;
  rec.retain_acc = Accuracy(pr, r.val.labels);
  rec.unlearn_acc = Accuracy(pu, u.val.labels);
  const auto pair = BuildMarginalPair(MeanPmf(pr), MeanPmf(pu), alpha);
  rec.mi_margin = MarginalMiLoss(pair.p0, pair.p1, prior);

  const int k = static_cast<int>(pr.cols());
  const std::vector<int> br = ArgmaxRows(pr);
  std::vector<int> bd = br;
  const std::vector<int> bu = ArgmaxRows(pu);
  bd.insert(bd.end(), bu.begin(), bu.end());
  rec.mi_binned = MutualInfoMixture(EmpiricalPmf(bd, k), EmpiricalPmf(br, k), prior);

  const Matrix tu = Forward(teacher, u.val.features).outputs;
  const std::vector<int> teacher_class = ArgmaxRows(tu);
  double kd = 0.0;
  for (Eigen::Index i = 0; i < pu.rows(); ++i) kd += pu(i, teacher_class[i]);
  rec.kd = kd / pu.rows();
  return rec;
}

PairLoss PairLossFor(const UnlearnConfig& c, double alpha,
                     const ModelParams& teacher, const Matrix& xr,
                     const Matrix& pr, std::span<const int> yr,
                     const Matrix& pu, std::span<const int> yu) {
  switch (c.method) {
    case Method::kMarginalMi:
      return LossMarginal(pr, yr, pu, c.lambda, alpha, c.prior);
    case Method::kGradDiff:
      return LossGradDiff(pr, yr, pu, yu, c.lambda, c.c_max);
    case Method::kKlAnchor:
      return LossKlAnchor(Forward(teacher, xr).outputs, pr, pu, yu, c.lambda,
                          c.c_max);
    case Method::kFeatureMi:
      break;
  }
  throw InvalidArgument("feature_mi is not a data-point unlearning method");
}

std::vector<int> Iota(int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

UnlearnResult TrainUnlearn(const UnlearnConfig& config, const ModelParams& init,
                           const TabularDataset& retain,
                           const TabularDataset& unlearn) {
  config.Validate();
  retain.Validate();
  unlearn.Validate();
  CheckClassifier(init, retain, "retain");
  CheckClassifier(init, unlearn, "unlearn");
  if (config.method == Method::kFeatureMi) {
    throw ConfigError("feature_mi is not a data-point unlearning method");
  }
  const double alpha = ResolveAlpha(config.alpha, retain.rows(), unlearn.rows());
  const SplitData r = SplitByLabel(retain, config.holdout_fraction, config.seed, false);
  const SplitData u =
      SplitByLabel(unlearn, config.holdout_fraction, config.seed + 1, false);

  const ModelParams& teacher = init;
  ModelParams params = init;
  OptimizerState opt = OptimizerState::For(params, config.adam);
  std::mt19937_64 rng(config.seed);

  UnlearnResult result;
  result.alpha = alpha;
  TrainTrajectory& traj = result.trajectory;
  traj.num_classes = init.output_dim();
  traj.baseline = Evaluate(params, teacher, r, u, alpha, config.prior);
  {
    const Matrix pr = Forward(params, r.train.features).outputs;
    const Matrix pu = Forward(params, u.train.features).outputs;
    const PairLoss l = PairLossFor(config, alpha, teacher, r.train.features, pr,
                                   r.train.labels, pu, u.train.labels);
    traj.baseline.loss_total = l.total;
    traj.baseline.loss_utility = l.utility;
    traj.baseline.loss_reg = l.reg;
  }

  std::vector<int> r_idx = Iota(r.train.rows());
  std::vector<int> u_idx = Iota(u.train.rows());
  const int nr = r.train.rows();
  const int nu = u.train.rows();
  const int steps = (nr + config.batch_size - 1) / config.batch_size;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(r_idx.begin(), r_idx.end(), rng);
    std::shuffle(u_idx.begin(), u_idx.end(), rng);
    double sum_total = 0.0;
    double sum_util = 0.0;
    double sum_reg = 0.0;
    for (int s = 0; s < steps; ++s) {
      const int r_begin = s * config.batch_size;
      const int r_end = std::min(nr, r_begin + config.batch_size);
      std::vector<int> rb(r_idx.begin() + r_begin, r_idx.begin() + r_end);
      const long u_begin = static_cast<long>(s) * nu / steps;
      const long u_end = static_cast<long>(s + 1) * nu / steps;
      std::vector<int> ub;
      if (u_begin == u_end) {
        ub.push_back(u_idx[u_begin % nu]);
      } else {
        ub.assign(u_idx.begin() + u_begin, u_idx.begin() + u_end);
      }
      const Matrix xr = Rows(r.train.features, rb);
      const Matrix xu = Rows(u.train.features, ub);
      const std::vector<int> yr = Pick(r.train.labels, rb);
      const std::vector<int> yu = Pick(u.train.labels, ub);
      const ForwardCache cr = Forward(params, xr);
      const ForwardCache cu = Forward(params, xu);
      const PairLoss loss =
          PairLossFor(config, alpha, teacher, xr, cr.outputs, yr, cu.outputs, yu);
      ModelParams grads = Backward(params, cr, loss.grad_retain);
      grads += Backward(params, cu, loss.grad_unlearn);
      AdamStep(opt, params, grads);
      sum_total += loss.total;
      sum_util += loss.utility;
      sum_reg += loss.reg;
    }
    EpochRecord rec = Evaluate(params, teacher, r, u, alpha, config.prior);
    rec.epoch = epoch;
    rec.loss_total = sum_total / steps;
    rec.loss_utility = sum_util / steps;
    rec.loss_reg = sum_reg / steps;
    traj.epochs.push_back(rec);
    Log().info("epoch {} retain_acc {:.4f} unlearn_acc {:.4f} mi {:.3e}", epoch,
               rec.retain_acc, rec.unlearn_acc, rec.mi_margin.nats());
    const StopDecision d = EarlyStopCheck(config.stop_rule, traj);
    if (d.stop) {
      traj.stopped = true;
      traj.stop_epoch = d.epoch;
      break;
    }
  }
  result.params = std::move(params);
  return result;
}

ModelParams TrainErm(const ModelParams& init, const TabularDataset& data,
                     int epochs, int batch_size, const AdamConfig& adam,
                     std::uint64_t seed) {
  CheckClassifier(init, data, "training");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  ModelParams params = init;
  OptimizerState opt = OptimizerState::For(params, adam);
  std::mt19937_64 rng(seed);
  std::vector<int> idx = Iota(data.rows());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int b = 0; b < data.rows(); b += batch_size) {
      std::vector<int> rows(idx.begin() + b,
                            idx.begin() + std::min(data.rows(), b + batch_size));
      const ForwardCache c = Forward(params, Rows(data.features, rows));
      Matrix g = Matrix::Zero(c.outputs.rows(), c.outputs.cols());
      CrossEntropyRows(c.outputs, Pick(data.labels, rows), 1.0, &g);
      AdamStep(opt, params, Backward(params, c, g));
    }
  }
  return params;
}

namespace {

FeatureRecord EvaluateFeature(const ModelParams& params, const TabularDataset& val,
                              int num_groups) {
  const Matrix p = Forward(params, val.features).outputs;
  FeatureRecord rec;
  rec.accuracy = Accuracy(p, val.labels);
  rec.acc_rand = AccRand(p, val.labels);
  std::vector<double> p1(p.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i) p1[i] = p(i, 1);
  rec.dp_gap = DpGap(p1, val.groups);
  rec.mi_feature = FeatureMiLoss(p, val.groups, num_groups).value;
  return rec;
}

}  // namespace

FeatureResult TrainFeature(const UnlearnConfig& config, const ModelParams& init,
                           const TabularDataset& data) {
  config.Validate();
  data.ValidateGroupsOccupied();
  CheckClassifier(init, data, "feature");
  const int num_groups = data.num_groups();
  if (num_groups < 2) throw DataError("feature unlearning needs at least two groups");
  const SplitData split =
      SplitByLabel(data, config.holdout_fraction, config.seed, true);

  ModelParams params = init;
  OptimizerState opt = OptimizerState::For(params, config.adam);
  std::mt19937_64 rng(config.seed);
  FeatureResult result;
  FeatureTrajectory& traj = result.trajectory;
  traj.baseline = EvaluateFeature(params, split.val, num_groups);

  const TabularDataset& train = split.train;
  std::vector<int> idx = Iota(train.rows());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double sum_total = 0.0;
    double sum_util = 0.0;
    double sum_reg = 0.0;
    bool skipped = false;
    int steps = 0;
    for (int b = 0; b < train.rows(); b += config.batch_size) {
      std::vector<int> rows(
          idx.begin() + b, idx.begin() + std::min(train.rows(), b + config.batch_size));
      const ForwardCache c = Forward(params, Rows(train.features, rows));
      const std::vector<int> y = Pick(train.labels, rows);
      const std::vector<int> z = Pick(train.groups, rows);
      const FeatureLoss loss = LossFeatureMi(c.outputs, y, z, num_groups, config.lambda);
      AdamStep(opt, params, Backward(params, c, loss.grad));
      sum_total += loss.total;
      sum_util += loss.utility;
      sum_reg += loss.reg;
      skipped = skipped || loss.skipped_group;
      ++steps;
    }
    FeatureRecord rec = EvaluateFeature(params, split.val, num_groups);
    rec.epoch = epoch;
    rec.loss_total = sum_total / steps;
    rec.loss_utility = sum_util / steps;
    rec.loss_reg = sum_reg / steps;
    rec.skipped_group = skipped;
    traj.epochs.push_back(rec);
  }
  result.params = std::move(params);
  return result;
}

void WriteFeatureTrajectoryCsv(const FeatureTrajectory& trajectory,
                               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "epoch,accuracy,acc_rand,dp_gap,mi_feature_nats,loss_total,"
         "loss_utility,loss_reg,skipped_group\n";
  auto row = [&](const FeatureRecord& r) {
    out << r.epoch << ',' << Num(r.accuracy) << ',' << Num(r.acc_rand) << ','
        << Num(r.dp_gap) << ',' << Num(r.mi_feature.nats()) << ','
        << Num(r.loss_total) << ',' << Num(r.loss_utility) << ','
        << Num(r.loss_reg) << ',' << (r.skipped_group ? 1 : 0) << '\n';
  };
  row(trajectory.baseline);
  for (const FeatureRecord& r : trajectory.epochs) row(r);
}

std::vector<double> ScalarOutputs(const ModelParams& params,
                                  std::span<const double> inputs) {
  const Matrix out = Forward(params, ColumnOf(inputs)).outputs;
  return std::vector<double>(out.data(), out.data() + out.size());
}

ModelParams PretrainScalar(const ModelParams& init,
                           std::span<const double> x_retain,
                           const KdeContext& kde, const GridDensity& target,
                           int steps, const AdamConfig& adam) {
  if (init.arch != Architecture::kResidualScalar) {
    throw InvalidArgument("pretraining needs the residual scalar net");
  }
  CheckMatchingTarget(target, kde);
  ModelParams params = init;
  OptimizerState opt = OptimizerState::For(params, adam);
  const Matrix x = ColumnOf(x_retain);
  const KdeLoss loss{KdeLossKind::kKlFrom,
                     std::vector<double>(target.values().begin(), target.values().end()),
                     0.5};
  for (int s = 0; s < steps; ++s) {
    const ForwardCache c = Forward(params, x);
    const std::vector<double> out(c.outputs.data(), c.outputs.data() + c.outputs.size());
    const KdeLossValue l = KdeLossGradient(out, kde.grid, kde.bandwidth, loss);
    AdamStep(opt, params, Backward(params, c, ColumnGradient(l.sample_gradient)));
    if (s % 250 == 0) Log().debug("pretrain step {} kl {:.4e}", s, l.value);
  }
  return params;
}

ScalarResult TrainUnlearnScalar(const ScalarUnlearnConfig& config,
                                const ModelParams& init,
                                std::span<const double> x_retain,
                                std::span<const double> x_unlearn,
                                const KdeContext& kde,
                                const GridDensity& target_r,
                                const GridDensity& target_u,
                                const ScalarStepHook& on_step) {
  if (init.arch != Architecture::kResidualScalar) {
    throw InvalidArgument("scalar unlearning needs the residual scalar net");
  }
  if (config.steps < 0) throw ConfigError("steps must be >= 0");
  CheckLambda(config.lambda);
  if (x_retain.empty() || x_unlearn.empty()) throw DataError("empty sample set");
  const double alpha = ResolveAlpha(config.alpha, x_retain.size(), x_unlearn.size());
  const Matrix xr = ColumnOf(x_retain);
  const Matrix xu = ColumnOf(x_unlearn);
  const GridDensity anchor =
      KdeOnGrid(ScalarOutputs(init, x_retain), kde.grid, kde.bandwidth);
  const GridDensity uniform = GridDensity::Uniform(kde.grid);

  ScalarResult result;
  result.alpha = alpha;
  ModelParams params = init;
  OptimizerState opt = OptimizerState::For(params, config.adam);
  for (int s = 0; s <= config.steps; ++s) {
    const ForwardCache cr = Forward(params, xr);
    const ForwardCache cu = Forward(params, xu);
    const std::span<const double> out_r(cr.outputs.data(), cr.outputs.size());
    const std::span<const double> out_u(cu.outputs.data(), cu.outputs.size());
    ScalarPairLoss loss;
    switch (config.method) {
      case Method::kMarginalMi:
        loss = KdeLossMarginal(out_r, out_u, kde, target_r, config.lambda, alpha,
                               config.prior);
        break;
      case Method::kGradDiff:
        loss = KdeLossGradDiff(out_r, out_u, kde, target_r, target_u,
                               config.lambda, config.c_max);
        break;
      case Method::kKlAnchor:
        loss = KdeLossKlAnchor(out_r, out_u, kde, anchor, target_u, config.lambda,
                               config.c_max);
        break;
      case Method::kFeatureMi:
        throw ConfigError("feature_mi is not a data-point unlearning method");
    }
    const GridDensity pr = KdeOnGrid(out_r, kde.grid, kde.bandwidth);
    const GridDensity pu = KdeOnGrid(out_u, kde.grid, kde.bandwidth);
    ScalarRecord rec;
    rec.step = s;
    const auto pair = BuildMarginalPair(pr, pu, alpha);
    rec.mi_margin = MarginalMiLoss(pair.p0, pair.p1, config.prior);
    rec.tv_unlearn_retain = TvDistance(pu, pr);
    rec.tv_retain_uniform = TvDistance(pr, uniform);
    rec.loss_total = loss.total;
    rec.loss_utility = loss.utility;
    rec.loss_reg = loss.reg;
    result.records.push_back(rec);
    if (on_step) on_step(s, out_r, out_u);
    if (s == config.steps) break;
    ModelParams grads = Backward(params, cr, ColumnGradient(loss.grad_retain));
    grads += Backward(params, cu, ColumnGradient(loss.grad_unlearn));
    AdamStep(opt, params, grads);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace unlearn
