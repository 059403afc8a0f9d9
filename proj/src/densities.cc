#include "unlearn/densities.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "unlearn/error.h"
#include "unlearn/logging.h"

namespace unlearn {
namespace {

void CheckWeights(std::span<const double> weights, std::size_t count) {
  if (weights.size() != count) {
    throw InvalidArgument("mixture: weight count does not match components");
  }
  if (count == 0) throw InvalidArgument("mixture: no components");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw InvalidArgument("mixture: negative weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw InvalidArgument(
        fmt::format("mixture: weights sum to {:.17g}, not 1", sum));
  }
}

template <typename Measure>
double HalfL1(const Measure& p, const Measure& q) {
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - q[i]);
  return std::min(1.0, 0.5 * sum * p.cell_weight());
}

}  // namespace

Grid::Grid(double lo, double hi, int n) : lo_(lo), hi_(hi), n_(n) {
  if (n < 2) throw InvalidArgument("grid needs at least 2 points");
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(hi > lo)) {
    throw InvalidArgument("grid bounds must be finite with hi > lo");
  }
  dx_ = (hi - lo) / (n - 1);
}

std::vector<double> Grid::points() const {
  std::vector<double> out(n_);
  for (int k = 0; k < n_; ++k) out[k] = point(k);
  return out;
}

GridDensity::GridDensity(Grid grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
  if (static_cast<int>(values_.size()) != grid_.size()) {
    throw InvalidArgument("density size does not match grid");
  }
  double mass = 0.0;
  for (double v : values_) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw InvalidArgument("density values must be finite and non-negative");
    }
    mass += v;
  }
  mass *= grid_.dx();
  if (std::abs(mass - 1.0) > kMassTolerance) {
    throw InvalidArgument(fmt::format("density mass {:.17g} is not 1", mass));
  }
}

GridDensity GridDensity::Normalized(Grid grid, std::vector<double> values) {
  double mass = 0.0;
  for (double v : values) mass += v;
  mass *= grid.dx();
  if (!(mass > 0.0) || !std::isfinite(mass)) {
    throw InvalidArgument("cannot normalize a density with zero mass");
  }
  for (double& v : values) v /= mass;
  return GridDensity(grid, std::move(values));
}

GridDensity GridDensity::Uniform(Grid grid) {
  return GridDensity(grid, std::vector<double>(grid.size(),
                                               1.0 / (grid.size() * grid.dx())));
}

CategoricalPMF::CategoricalPMF(std::vector<double> probs)
    : probs_(std::move(probs)) {
  if (probs_.size() < 2) throw InvalidArgument("PMF needs K >= 2");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw InvalidArgument("PMF entries must be finite and non-negative");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kMassTolerance) {
    throw InvalidArgument(fmt::format("PMF sums to {:.17g}, not 1", sum));
  }
}

CategoricalPMF CategoricalPMF::Normalized(std::vector<double> weights) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    throw InvalidArgument("cannot normalize a PMF with zero mass");
  }
  for (double& w : weights) w /= sum;
  return CategoricalPMF(std::move(weights));
}

bool SameSupport(const GridDensity& a, const GridDensity& b) {
  return a.grid() == b.grid();
}

bool SameSupport(const CategoricalPMF& a, const CategoricalPMF& b) {
  return a.size() == b.size();
}

double MinBandwidth(const Grid& grid) { return 1e-12 * (grid.hi() - grid.lo()); }

GridDensity KdeOnGrid(std::span<const double> samples, const Grid& grid,
                      double bandwidth) {
  if (samples.empty()) throw InvalidArgument("no samples");
  if (!(bandwidth > 0.0)) throw InvalidArgument("bandwidth must be positive");
  for (double s : samples) {
    if (!std::isfinite(s)) throw InvalidArgument("non-finite input");
  }
  double h = bandwidth;
  if (h < MinBandwidth(grid)) {
    Log().warn("KDE bandwidth {:.3g} clamped to {:.3g}", h, MinBandwidth(grid));
    h = MinBandwidth(grid);
  }
  const int n = grid.size();
  const double inv_two_h2 = 1.0 / (2.0 * h * h);
  const double scale = 1.0 / (samples.size() * grid.dx());
  std::vector<double> values(n, 0.0);
  std::vector<double> kernel(n);
  for (double s : samples) {
    // Log-sum-exp: the largest exponent is shifted to zero, so samples far
    // off the grid still distribute unit mass onto its nearest points.
    double max_exponent = -INFINITY;
    for (int k = 0; k < n; ++k) {
      const double d = grid.point(k) - s;
      kernel[k] = -d * d * inv_two_h2;
      max_exponent = std::max(max_exponent, kernel[k]);
    }
    double norm = 0.0;
    for (int k = 0; k < n; ++k) {
      kernel[k] = std::exp(kernel[k] - max_exponent);
      norm += kernel[k];
    }
    const double w = scale / norm;
    for (int k = 0; k < n; ++k) values[k] += kernel[k] * w;
  }
  return GridDensity(grid, std::move(values));
}

GridDensity Mixture(std::span<const GridDensity> components,
                    std::span<const double> weights) {
  CheckWeights(weights, components.size());
  const Grid& grid = components.front().grid();
  std::vector<double> values(grid.size(), 0.0);
  for (std::size_t c = 0; c < components.size(); ++c) {
    if (!SameSupport(components[c], components.front())) {
      throw InvalidArgument("mixture: mismatched support");
    }
    for (std::size_t k = 0; k < values.size(); ++k) {
      values[k] += weights[c] * components[c][k];
    }
  }
  return GridDensity(grid, std::move(values));
}

CategoricalPMF Mixture(std::span<const CategoricalPMF> components,
                       std::span<const double> weights) {
  CheckWeights(weights, components.size());
  std::vector<double> probs(components.front().size(), 0.0);
  for (std::size_t c = 0; c < components.size(); ++c) {
    if (!SameSupport(components[c], components.front())) {
      throw InvalidArgument("mixture: mismatched support");
    }
    for (std::size_t k = 0; k < probs.size(); ++k) {
      probs[k] += weights[c] * components[c][k];
    }
  }
  return CategoricalPMF(std::move(probs));
}

double TvDistance(const GridDensity& p, const GridDensity& q) {
  if (!SameSupport(p, q)) throw InvalidArgument("tv: mismatched support");
  return HalfL1(p, q);
}

double TvDistance(const CategoricalPMF& p, const CategoricalPMF& q) {
  if (!SameSupport(p, q)) throw InvalidArgument("tv: mismatched support");
  return HalfL1(p, q);
}

CategoricalPMF EmpiricalPmf(std::span<const int> labels, int num_classes) {
  if (labels.empty()) throw InvalidArgument("empirical pmf: empty input");
  std::vector<double> counts(num_classes, 0.0);
  for (int label : labels) {
    if (label < 0 || label >= num_classes) {
      throw InvalidArgument(
          fmt::format("empirical pmf: label {} outside 0..{}", label,
                      num_classes - 1));
    }
    counts[label] += 1.0;
  }
  for (double& c : counts) c /= static_cast<double>(labels.size());
  return CategoricalPMF(std::move(counts));
}

void WriteGridDensityCsv(const GridDensity& density, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "x,value\n";
  for (std::size_t k = 0; k < density.size(); ++k) {
    out << fmt::format("{},{}\n", density.grid().point(static_cast<int>(k)),
                       density[k]);
  }
}

}  // namespace unlearn
