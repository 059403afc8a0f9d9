#include "unlearn/barycenter.h"

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

std::vector<int> SortedOrder(const Matrix& points) {
  std::vector<int> order(points.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return points(a, 0) < points(b, 0); });
  return order;
}

// Walks the monotone coupling of two sorted 1D clouds, calling
// visit(source_index, target_index, mass) for every non-zero cell.
template <typename Visit>
void WalkMonotone(const PointCloud& a, const PointCloud& b, Visit visit) {
  const std::vector<int> ia = SortedOrder(a.points);
  const std::vector<int> ib = SortedOrder(b.points);
  std::size_t i = 0;
  std::size_t j = 0;
  double ra = a.weights(ia[0]);
  double rb = b.weights(ib[0]);
  while (i < ia.size() && j < ib.size()) {
    const double mass = std::min(ra, rb);
    if (mass > 0.0) visit(ia[i], ib[j], mass);
    ra -= mass;
    rb -= mass;
    // Whichever remainder hit zero advances; rounding residue left on the
    // last atom is dropped.
    if (ra <= 0.0 && ++i < ia.size()) ra = a.weights(ia[i]);
    if (rb <= 0.0 && ++j < ib.size()) rb = b.weights(ib[j]);
  }
}

void CheckOneDim(const PointCloud& c, const char* who) {
  c.Validate();
  if (c.dim() != 1) throw InvalidArgument(fmt::format("{}: cloud must be 1D", who));
}

Matrix SquaredCost(const Matrix& x, const Matrix& y) {
  Matrix c(x.rows(), y.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
      c(i, j) = (x.row(i) - y.row(j)).squaredNorm();
    }
  }
  return c;
}

// Min-cost perfect matching on a square cost matrix by shortest augmenting
// paths with potentials; returns col_of_row.
std::vector<int> SolveAssignment(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  std::vector<double> u(n + 1, 0.0);
  std::vector<double> v(n + 1, 0.0);
  std::vector<int> row_of(n + 1, 0);  // row_of[j]: row matched to column j (1-based)
  std::vector<int> way(n + 1, 0);
  std::vector<double> minv(n + 1);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    row_of[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), INFINITY);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = row_of[j0];
      double delta = INFINITY;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of[j0] != 0);
    do {
      const int j1 = way[j0];
      row_of[j0] = row_of[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> col_of(n);
  for (int j = 1; j <= n; ++j) col_of[row_of[j] - 1] = j - 1;
  return col_of;
}

long long LcmSize(int m, int n) {
  return static_cast<long long>(m) / std::gcd(m, n) * n;
}

double LogSumExp(const double* v, Eigen::Index n, Eigen::Index stride) {
  double mx = -INFINITY;
  for (Eigen::Index k = 0; k < n; ++k) mx = std::max(mx, v[k * stride]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) s += std::exp(v[k * stride] - mx);
  return mx + std::log(s);
}

struct SinkhornState {
  Vector f;
  Vector g;
};

// Runs log-domain iterations at one regularization; returns the final L1
// row-marginal violation.
double SinkhornSweeps(const Matrix& cost, const Vector& log_a, const Vector& log_b,
                      double reg, int max_iter, double tol, SinkhornState& s,
                      int* used) {
  const Eigen::Index m = cost.rows();
  const Eigen::Index n = cost.cols();
  Matrix work(m, n);
  double err = INFINITY;
  int it = 0;
  for (; it < max_iter; ++it) {
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        work(i, j) = (s.g(j) - cost(i, j)) / reg + log_b(j);
      }
      s.f(i) = -reg * LogSumExp(&work(i, 0), n, 1);
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        work(i, j) = (s.f(i) - cost(i, j)) / reg + log_a(i);
      }
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      s.g(j) = -reg * LogSumExp(&work(0, j), m, n);
    }
    if (it % 5 == 4 || it + 1 == max_iter) {
      err = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        double row = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
          row += std::exp((s.f(i) + s.g(j) - cost(i, j)) / reg + log_a(i) + log_b(j));
        }
        err += std::abs(row - std::exp(log_a(i)));
      }
      if (err <= tol) break;
    }
  }
  if (used) *used = it + 1;
  return err;
}

}  // namespace

PointCloud PointCloud::Uniform(Matrix points) {
  const Eigen::Index m = points.rows();
  if (m == 0) throw InvalidArgument("empty cloud");
  return {std::move(points), Vector::Constant(m, 1.0 / static_cast<double>(m))};
}

PointCloud PointCloud::FromValues(std::span<const double> values) {
  Matrix m(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = values[i];
  return Uniform(std::move(m));
}

bool PointCloud::uniform() const {
  if (size() == 0) return false;
  const double w = 1.0 / size();
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (weights(i) != w) return false;
  }
  return true;
}

void PointCloud::Validate() const {
  if (points.rows() == 0) throw InvalidArgument("empty cloud");
  if (weights.size() != points.rows()) {
    throw InvalidArgument("cloud weights do not match points");
  }
  if (!points.allFinite()) throw InvalidArgument("non-finite point");
  if ((weights.array() < 0.0).any()) throw InvalidArgument("negative cloud weight");
  if (std::abs(weights.sum() - 1.0) > 1e-12) {
    throw InvalidArgument("cloud weights must sum to 1");
  }
}

Matrix TransportMap::Apply(const Matrix& x) const {
  if (x.cols() != source.cols()) throw InvalidArgument("map dimension mismatch");
  std::vector<int> order(source.rows());
  std::iota(order.begin(), order.end(), 0);
  auto less_rows = [](const auto& a, const auto& b) {
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      if (a(k) < b(k)) return true;
      if (b(k) < a(k)) return false;
    }
    return false;
  };
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return less_rows(source.row(a), source.row(b));
  });
  Matrix out(x.rows(), images.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    auto it = std::lower_bound(order.begin(), order.end(), 0,
                               [&](int idx, int) { return less_rows(source.row(idx), row); });
    if (it == order.end() || less_rows(row, source.row(*it))) {
      throw InvalidArgument("uncovered point");
    }
    out.row(i) = images.row(*it);
  }
  return out;
}

Coupling MonotoneCoupling1d(const PointCloud& source, const PointCloud& target) {
  CheckOneDim(source, "monotone coupling");
  CheckOneDim(target, "monotone coupling");
  Coupling c{Matrix::Zero(source.size(), target.size())};
  WalkMonotone(source, target, [&](int i, int j, double mass) { c.plan(i, j) += mass; });
  return c;
}

TransportMap OtMap1d(const PointCloud& source, const PointCloud& target) {
  CheckOneDim(source, "ot_map_1d");
  CheckOneDim(target, "ot_map_1d");
  TransportMap map;
  map.source = source.points;
  map.images = Matrix::Zero(source.size(), 1);
  if (source.size() == target.size() && source.uniform() && target.uniform()) {
    map.kind = MapKind::kSorted1d;
    const std::vector<int> ia = SortedOrder(source.points);
    const std::vector<int> ib = SortedOrder(target.points);
    for (std::size_t k = 0; k < ia.size(); ++k) {
      map.images(ia[k], 0) = target.points(ib[k], 0);
    }
    return map;
  }
  map.kind = MapKind::kBarycentric;
  Vector mass = Vector::Zero(source.size());
  WalkMonotone(source, target, [&](int i, int j, double m) {
    map.images(i, 0) += m * target.points(j, 0);
    mass(i) += m;
  });
  for (int i = 0; i < source.size(); ++i) {
    if (mass(i) > 0.0) {
      map.images(i, 0) /= mass(i);
    } else {
      map.images(i, 0) = source.points(i, 0);  // zero-weight atom
    }
  }
  return map;
}

double W2Squared1d(const PointCloud& a, const PointCloud& b) {
  CheckOneDim(a, "w2");
  CheckOneDim(b, "w2");
  double sum = 0.0;
  WalkMonotone(a, b, [&](int i, int j, double mass) {
    const double d = a.points(i, 0) - b.points(j, 0);
    sum += mass * d * d;
  });
  return sum;
}

Coupling SinkhornPlan(const PointCloud& source, const PointCloud& target,
                      const SinkhornOptions& options) {
  source.Validate();
  target.Validate();
  if (source.dim() != target.dim()) throw InvalidArgument("dimension mismatch");
  if (options.max_iter < 1) throw InvalidArgument("sinkhorn: max_iter must be >= 1");
  const Eigen::Index m = source.size();
  const Eigen::Index n = target.size();
  const Matrix cost = SquaredCost(source.points, target.points);
  const double mean_cost = cost.mean();
  if (mean_cost == 0.0) {
    return {source.weights * target.weights.transpose()};
  }
  const double reg = options.reg > 0.0 ? options.reg : options.reg_scale * mean_cost;
  if (!(reg > 0.0)) throw InvalidArgument("sinkhorn: reg must be positive");

  const Vector log_a = source.weights.array().log();
  const Vector log_b = target.weights.array().log();
  SinkhornState state{Vector::Zero(m), Vector::Zero(n)};
  // Warm start through a geometric schedule of larger regularizations.
  for (double r = mean_cost; r > reg; r *= 0.5) {
    SinkhornSweeps(cost, log_a, log_b, r, 200, 1e-6, state, nullptr);
  }
  int used = 0;
  const double err = SinkhornSweeps(cost, log_a, log_b, reg, options.max_iter,
                                    options.tol, state, &used);
  if (!(err <= options.tol)) {
    throw NonConvergenceError(
        fmt::format("sinkhorn did not converge in {} iterations; marginal "
                    "violation {:.3e}",
                    options.max_iter, err),
        err);
  }
  Log().debug("sinkhorn converged after {} iterations (reg {:.3e})", used, reg);
  Coupling c{Matrix(m, n)};
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      c.plan(i, j) = std::exp((state.f(i) + state.g(j) - cost(i, j)) / reg +
                              log_a(i) + log_b(j));
    }
  }
  return c;
}

bool ExactPlanFeasible(const PointCloud& source, const PointCloud& target,
                       const SinkhornOptions& options) {
  return source.uniform() && target.uniform() &&
         LcmSize(source.size(), target.size()) <= options.exact_max_atoms;
}

Coupling ExactUniformPlan(const PointCloud& source, const PointCloud& target) {
  source.Validate();
  target.Validate();
  if (source.dim() != target.dim()) throw InvalidArgument("dimension mismatch");
  if (!source.uniform() || !target.uniform()) {
    throw InvalidArgument("exact plan needs uniform weights");
  }
  const int m = source.size();
  const int n = target.size();
  const long long big = LcmSize(m, n);
  if (big > 20000) throw InvalidArgument("exact plan: lcm of sizes too large");
  const int size = static_cast<int>(big);
  const int rep_s = size / m;
  const int rep_t = size / n;
  const Matrix base = SquaredCost(source.points, target.points);
  Matrix cost(size, size);
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) cost(i, j) = base(i / rep_s, j / rep_t);
  }
  const std::vector<int> col_of = SolveAssignment(cost);
  Coupling c{Matrix::Zero(m, n)};
  for (int i = 0; i < size; ++i) c.plan(i / rep_s, col_of[i] / rep_t) += 1.0 / size;
  return c;
}

TransportMap BarycentricProjection(const Coupling& coupling,
                                   const PointCloud& source,
                                   const PointCloud& target) {
  if (coupling.plan.rows() != source.size() || coupling.plan.cols() != target.size()) {
    throw InvalidArgument("coupling shape does not match clouds");
  }
  if ((coupling.plan.array() < 0.0).any()) {
    throw InvalidArgument("coupling has negative entries");
  }
  TransportMap map;
  map.kind = MapKind::kBarycentric;
  map.source = source.points;
  map.images = coupling.plan * target.points;
  const Vector rows = coupling.plan.rowwise().sum();
  for (Eigen::Index i = 0; i < rows.size(); ++i) {
    if (!(rows(i) > 0.0)) {
      throw InvalidArgument(fmt::format("coupling row {} has zero mass", i));
    }
    map.images.row(i) /= rows(i);
  }
  return map;
}

W2Estimate W2Distance(const PointCloud& a, const PointCloud& b,
                      const SinkhornOptions& options) {
  if (a.dim() != b.dim()) throw InvalidArgument("dimension mismatch");
  if (a.dim() == 1) return {std::sqrt(std::max(0.0, W2Squared1d(a, b))), false};
  const bool exact = ExactPlanFeasible(a, b, options);
  const Coupling c = exact ? ExactUniformPlan(a, b) : SinkhornPlan(a, b, options);
  const double cost = c.plan.cwiseProduct(SquaredCost(a.points, b.points)).sum();
  return {std::sqrt(std::max(0.0, cost)), !exact};
}

TransportMap EstimateMap(const PointCloud& source, const PointCloud& target,
                         const SinkhornOptions& options) {
  if (source.dim() != target.dim()) throw InvalidArgument("dimension mismatch");
  if (source.dim() == 1) return OtMap1d(source, target);
  const Coupling c = ExactPlanFeasible(source, target, options)
                         ? ExactUniformPlan(source, target)
                         : SinkhornPlan(source, target, options);
  return BarycentricProjection(c, source, target);
}

BarycenterResult FixedPointBarycenter(const std::vector<PointCloud>& groups,
                                      std::span<const double> weights,
                                      const BarycenterOptions& options) {
  if (groups.size() < 2) throw InvalidArgument("barycenter needs at least two groups");
  if (weights.size() != groups.size()) {
    throw InvalidArgument("barycenter: one weight per group required");
  }
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw InvalidArgument("barycenter: negative weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-12) {
    throw InvalidArgument("barycenter: weights must sum to 1");
  }
  const int d = groups.front().dim();
  int pooled = 0;
  int largest = 0;
  for (const PointCloud& g : groups) {
    g.Validate();
    if (g.dim() != d) throw InvalidArgument("barycenter: groups differ in dimension");
    pooled += g.size();
    largest = std::max(largest, g.size());
  }
  const int m = options.support_size > 0 ? options.support_size : largest;

  Matrix all(pooled, d);
  int at = 0;
  for (const PointCloud& g : groups) {
    all.middleRows(at, g.size()) = g.points;
    at += g.size();
  }
  std::mt19937_64 rng(options.seed);
  std::vector<int> pick;
  if (m <= pooled) {
    std::vector<int> idx(pooled);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    pick.assign(idx.begin(), idx.begin() + m);
  } else {
    std::uniform_int_distribution<int> u(0, pooled - 1);
    for (int i = 0; i < m; ++i) pick.push_back(u(rng));
  }
  Matrix init(m, d);
  for (int i = 0; i < m; ++i) init.row(i) = all.row(pick[i]);

  BarycenterResult result;
  PointCloud x = PointCloud::Uniform(std::move(init));
  for (int it = 1; it <= options.max_iter; ++it) {
    Matrix next = Matrix::Zero(m, d);
    for (std::size_t z = 0; z < groups.size(); ++z) {
      if (weights[z] == 0.0) continue;
      if (d > 1 && !ExactPlanFeasible(x, groups[z], options.sinkhorn)) {
        result.approximate = true;
      }
      next += weights[z] * EstimateMap(x, groups[z], options.sinkhorn).images;
    }
    PointCloud x_new = PointCloud::Uniform(std::move(next));
    double change = 0.0;
    if (d == 1) {
      change = std::sqrt(std::max(0.0, W2Squared1d(x, x_new)));
    } else {
      // The index coupling bounds W2 from above.
      change = std::sqrt((x.points - x_new.points).rowwise().squaredNorm().mean());
    }
    x = std::move(x_new);
    result.iterations = it;
    result.last_change = change;
    if (change < options.tol) {
      result.converged = true;
      break;
    }
  }
  if (!result.converged) {
    Log().warn("barycenter did not converge in {} iterations (last change {:.3e})",
               options.max_iter, result.last_change);
  }
  result.barycenter = std::move(x);
  return result;
}

PointCloud MccannMidpoint(const PointCloud& x, const TransportMap& map) {
  const Matrix image = map.Apply(x.points);
  return {0.5 * x.points + 0.5 * image, x.weights};
}

NeutralizeResult NeutralizeDataset(const TabularDataset& data,
                                   const BarycenterOptions& options) {
  data.ValidateGroupsOccupied();
  const int num_groups = data.num_groups();
  if (num_groups < 2) throw DataError("neutralization needs at least two groups");
  std::vector<PointCloud> clouds;
  std::vector<std::vector<int>> rows;
  std::vector<double> weights;
  for (int z = 0; z < num_groups; ++z) {
    rows.push_back(data.RowsWithGroup(z));
    if (rows.back().size() < 2) {
      throw DataError(fmt::format("group {} needs at least two rows", z));
    }
    clouds.push_back(PointCloud::Uniform(data.Subset(rows.back()).features));
    weights.push_back(static_cast<double>(rows.back().size()) / data.rows());
  }
  NeutralizeResult result;
  result.barycenter = FixedPointBarycenter(clouds, weights, options);
  result.data = data;
  for (int z = 0; z < num_groups; ++z) {
    const PointCloud& target = result.barycenter.barycenter;
    if (target.dim() > 1 && !ExactPlanFeasible(clouds[z], target, options.sinkhorn)) {
      result.barycenter.approximate = true;
    }
    const TransportMap map = EstimateMap(clouds[z], target, options.sinkhorn);
    for (std::size_t i = 0; i < rows[z].size(); ++i) {
      result.data.features.row(rows[z][i]) = map.images.row(static_cast<Eigen::Index>(i));
    }
  }
  result.orig_row.resize(data.rows());
  std::iota(result.orig_row.begin(), result.orig_row.end(), 0);
  return result;
}

void WriteNeutralizedCsv(const NeutralizeResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  const TabularDataset& d = result.data;
  for (int j = 0; j < d.dim(); ++j) out << 'f' << j << ',';
  out << "y,z,orig_row,group\n";
  for (int i = 0; i < d.rows(); ++i) {
    for (int j = 0; j < d.dim(); ++j) out << fmt::format("{},", d.features(i, j));
    out << d.labels[i] << ',' << d.groups[i] << ',' << result.orig_row[i] << ','
        << d.groups[i] << '\n';
  }
}

}  // namespace unlearn
