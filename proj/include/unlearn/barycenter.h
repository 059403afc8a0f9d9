#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unlearn/dataset.h"

namespace unlearn {

struct PointCloud {
  Matrix points;  // m x d
  Vector weights; // sums to 1

  static PointCloud Uniform(Matrix points);
  static PointCloud FromValues(std::span<const double> values);  // d = 1

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
  bool uniform() const;
  void Validate() const;
};

struct Coupling {
  Matrix plan;  // source x target
};

enum class MapKind { kSorted1d, kBarycentric };

// A map tabulated on the source cloud: images.row(i) = T(source.row(i)).
struct TransportMap {
  MapKind kind = MapKind::kSorted1d;
  Matrix source;
  Matrix images;

  // Looks up each row of x among the source points; a point not in the
  // table raises InvalidArgument("uncovered point").
  Matrix Apply(const Matrix& x) const;
};

// Monotone rearrangement. Equal sizes with uniform weights give the
// order-statistic pairing; otherwise each source atom is sent to the
// average of the target quantile function over its mass (barycentric
// projection of the monotone coupling).
TransportMap OtMap1d(const PointCloud& source, const PointCloud& target);

// Monotone (north-west corner) coupling of two 1D clouds in sorted order,
// indexed by the original point order.
Coupling MonotoneCoupling1d(const PointCloud& source, const PointCloud& target);

struct SinkhornOptions {
  double reg = 0.0;         // absolute; <= 0 means reg_scale * mean cost
  double reg_scale = 5e-2;
  int max_iter = 20000;
  double tol = 1e-8;        // L1 violation of the row marginal
  // For d > 1, uniform clouds whose sizes have lcm at most this are coupled
  // exactly by assignment instead.
  int exact_max_atoms = 1500;
};

// Exact optimal coupling of two uniform clouds (squared Euclidean cost),
// solved as an assignment between lcm(m, n) replicated atoms.
Coupling ExactUniformPlan(const PointCloud& source, const PointCloud& target);

// Log-domain Sinkhorn for the squared Euclidean cost. Throws
// NonConvergenceError carrying the final marginal violation.
Coupling SinkhornPlan(const PointCloud& source, const PointCloud& target,
                      const SinkhornOptions& options = {});

// T(x_i) = sum_j plan_ij y_j / sum_j plan_ij; zero-mass rows are rejected.
TransportMap BarycentricProjection(const Coupling& coupling,
                                   const PointCloud& source,
                                   const PointCloud& target);

struct W2Estimate {
  double value = 0.0;
  bool approximate = false;  // entropic estimate (d > 1 and no exact plan)
};

W2Estimate W2Distance(const PointCloud& a, const PointCloud& b,
                      const SinkhornOptions& options = {});

// Exact 1D squared W2 by merging the two quantile functions.
double W2Squared1d(const PointCloud& a, const PointCloud& b);

// T: source -> target. 1D monotone, else barycentric projection of the
// exact plan when ExactPlanFeasible, else of the entropic plan.
TransportMap EstimateMap(const PointCloud& source, const PointCloud& target,
                         const SinkhornOptions& options = {});
bool ExactPlanFeasible(const PointCloud& source, const PointCloud& target,
                       const SinkhornOptions& options = {});

struct BarycenterOptions {
  double tol = 1e-9;
  int max_iter = 100;
  int support_size = 0;  // 0: largest group size
  std::uint64_t seed = 7;
  SinkhornOptions sinkhorn;
};

struct BarycenterResult {
  PointCloud barycenter;
  bool converged = false;
  int iterations = 0;
  double last_change = 0.0;  // W2 between the last two iterates
  bool approximate = false;  // some map used the entropic plan
};

// Iterates X <- sum_z w_z T_z(X) with T_z: X -> group z, starting from a
// seeded subsample of the pooled groups.
BarycenterResult FixedPointBarycenter(const std::vector<PointCloud>& groups,
                                      std::span<const double> weights,
                                      const BarycenterOptions& options = {});

// x / 2 + T(x) / 2.
PointCloud MccannMidpoint(const PointCloud& x, const TransportMap& map);

struct NeutralizeResult {
  TabularDataset data;          // features replaced, labels and groups kept
  std::vector<int> orig_row;
  BarycenterResult barycenter;
};

NeutralizeResult NeutralizeDataset(const TabularDataset& data,
                                   const BarycenterOptions& options = {});

// Columns f0..f{d-1}, y, z, orig_row, group.
void WriteNeutralizedCsv(const NeutralizeResult& result, const std::string& path);

}  // namespace unlearn
