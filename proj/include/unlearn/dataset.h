#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace unlearn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Rows of (features, label y, group z).
struct TabularDataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<int> groups;

  int rows() const { return static_cast<int>(labels.size()); }
  int dim() const { return static_cast<int>(features.cols()); }
  int num_classes() const;  // max label + 1, at least 2
  int num_groups() const;   // max group + 1

  // Throws unless all three columns have the same length and indices are
  // non-negative.
  void Validate() const;
  // Additionally requires every group index in 0..num_groups()-1 to occur.
  void ValidateGroupsOccupied() const;

  TabularDataset Subset(const std::vector<int>& rows) const;
  std::vector<int> RowsWithGroup(int group) const;
};

TabularDataset Concatenate(const TabularDataset& a, const TabularDataset& b);

// CSV with header f0..f{d-1}, y, z (any column order). Schema violations are
// reported as data errors with 1-based line numbers.
TabularDataset ReadDatasetCsv(const std::string& path);
void WriteDatasetCsv(const TabularDataset& data, const std::string& path);

// Seeded 80/20-style split stratified by `strata` (labels or groups).
// Returns (train rows, held-out rows); every stratum with >= 2 rows
// contributes at least one row to each side.
std::pair<std::vector<int>, std::vector<int>> StratifiedSplit(
    const std::vector<int>& strata, double holdout_fraction, std::uint64_t seed);

}  // namespace unlearn
