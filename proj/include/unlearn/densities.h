#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace unlearn {

// Uniform 1D grid with inclusive endpoints: points lo + k*dx, k = 0..n-1.
class Grid {
 public:
  Grid(double lo, double hi, int n);

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  int size() const { return n_; }
  double dx() const { return dx_; }
  double point(int k) const { return lo_ + k * dx_; }
  std::vector<double> points() const;

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.lo_ == b.lo_ && a.hi_ == b.hi_ && a.n_ == b.n_;
  }

 private:
  double lo_;
  double hi_;
  int n_;
  double dx_;
};

// Density sampled on a grid; sum(values) * dx == 1.
class GridDensity {
 public:
  static constexpr double kMassTolerance = 1e-9;

  // Validates non-negativity and unit mass.
  GridDensity(Grid grid, std::vector<double> values);

  // Rescales arbitrary non-negative values to unit mass.
  static GridDensity Normalized(Grid grid, std::vector<double> values);
  static GridDensity Uniform(Grid grid);

  const Grid& grid() const { return grid_; }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t k) const { return values_[k]; }
  std::size_t size() const { return values_.size(); }
  double cell_weight() const { return grid_.dx(); }

 private:
  Grid grid_;
  std::vector<double> values_;
};

// Probability vector over K >= 2 categories.
class CategoricalPMF {
 public:
  static constexpr double kMassTolerance = 1e-12;

  explicit CategoricalPMF(std::vector<double> probs);

  static CategoricalPMF Normalized(std::vector<double> weights);

  std::span<const double> probs() const { return probs_; }
  double operator[](std::size_t k) const { return probs_[k]; }
  std::size_t size() const { return probs_.size(); }
  double cell_weight() const { return 1.0; }

 private:
  std::vector<double> probs_;
};

bool SameSupport(const GridDensity& a, const GridDensity& b);
bool SameSupport(const CategoricalPMF& a, const CategoricalPMF& b);

// Per-sample grid-normalized Gaussian KDE:
//   p(x_k) = 1/m sum_l K(x_k, s_l) / (sum_j K(x_j, s_l) dx).
// Bandwidths below 1e-12 * (hi - lo) are clamped with a warning.
GridDensity KdeOnGrid(std::span<const double> samples, const Grid& grid,
                      double bandwidth);

// Smallest bandwidth KdeOnGrid will use on this grid.
double MinBandwidth(const Grid& grid);

GridDensity Mixture(std::span<const GridDensity> components,
                    std::span<const double> weights);
CategoricalPMF Mixture(std::span<const CategoricalPMF> components,
                       std::span<const double> weights);

double TvDistance(const GridDensity& p, const GridDensity& q);
double TvDistance(const CategoricalPMF& p, const CategoricalPMF& q);

CategoricalPMF EmpiricalPmf(std::span<const int> labels, int num_classes);

// Writes "x,value" rows with a header.
void WriteGridDensityCsv(const GridDensity& density, const std::string& path);

}  // namespace unlearn
