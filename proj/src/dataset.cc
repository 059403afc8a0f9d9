#include "unlearn/dataset.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "unlearn/error.h"

namespace unlearn {
namespace {

std::vector<std::string> SplitLine(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) {
      cell.pop_back();
    }
    std::size_t start = cell.find_first_not_of(' ');
    cells.push_back(start == std::string::npos ? "" : cell.substr(start));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double ParseDouble(const std::string& text, const std::string& path, int line) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() ||
      !std::isfinite(value)) {
    throw DataError(fmt::format("{}:{}: cannot parse '{}' as a finite number",
                                path, line, text));
  }
  return value;
}

int ParseIndex(const std::string& text, const std::string& path, int line,
               const char* column) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || value < 0) {
    throw DataError(fmt::format(
        "{}:{}: column {} needs a non-negative integer, got '{}'", path, line,
        column, text));
  }
  return value;
}

}  // namespace

int TabularDataset::num_classes() const {
  int k = 0;
  for (int y : labels) k = std::max(k, y + 1);
  return std::max(k, 2);
}

int TabularDataset::num_groups() const {
  int g = 0;
  for (int z : groups) g = std::max(g, z + 1);
  return g;
}

void TabularDataset::Validate() const {
  if (static_cast<std::size_t>(features.rows()) != labels.size() ||
      labels.size() != groups.size()) {
    throw DataError("dataset columns have different row counts");
  }
  for (int y : labels) {
    if (y < 0) throw DataError("negative label");
  }
  for (int z : groups) {
    if (z < 0) throw DataError("negative group index");
  }
}

void TabularDataset::ValidateGroupsOccupied() const {
  Validate();
  std::vector<int> counts(num_groups(), 0);
  for (int z : groups) ++counts[z];
  for (std::size_t z = 0; z < counts.size(); ++z) {
    if (counts[z] == 0) {
      throw DataError(fmt::format("group {} has no rows", z));
    }
  }
}

TabularDataset TabularDataset::Subset(const std::vector<int>& rows) const {
  TabularDataset out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  out.groups.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(rows[i]);
    out.labels.push_back(labels[rows[i]]);
    out.groups.push_back(groups[rows[i]]);
  }
  return out;
}

std::vector<int> TabularDataset::RowsWithGroup(int group) const {
  std::vector<int> rows;
  for (int i = 0; i < this->rows(); ++i) {
    if (groups[i] == group) rows.push_back(i);
  }
  return rows;
}

TabularDataset Concatenate(const TabularDataset& a, const TabularDataset& b) {
  if (a.dim() != b.dim()) throw DataError("datasets have different widths");
  TabularDataset out;
  out.features.resize(a.features.rows() + b.features.rows(), a.dim());
  out.features << a.features, b.features;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.groups = a.groups;
  out.groups.insert(out.groups.end(), b.groups.begin(), b.groups.end());
  return out;
}

TabularDataset ReadDatasetCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  const std::vector<std::string> header = SplitLine(line);

  std::map<int, int> feature_columns;  // feature index -> column
  int y_column = -1;
  int z_column = -1;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const std::string& name = header[c];
    if (name == "y") {
      y_column = c;
    } else if (name == "z") {
      z_column = c;
    } else if (name.size() > 1 && name[0] == 'f') {
      int index = 0;
      auto [ptr, ec] =
          std::from_chars(name.data() + 1, name.data() + name.size(), index);
      if (ec != std::errc() || ptr != name.data() + name.size() || index < 0) {
        throw DataError(fmt::format("{}:1: unexpected column '{}'", path, name));
      }
      if (!feature_columns.emplace(index, c).second) {
        throw DataError(fmt::format("{}:1: duplicate column '{}'", path, name));
      }
    } else {
      throw DataError(fmt::format("{}:1: unexpected column '{}'", path, name));
    }
  }
  if (y_column < 0 || z_column < 0) {
    throw DataError(path + ":1: header must contain y and z columns");
  }
  const int dim = static_cast<int>(feature_columns.size());
  int expected = 0;
  for (const auto& [index, column] : feature_columns) {
    if (index != expected++) {
      throw DataError(fmt::format("{}:1: feature columns must be f0..f{}", path,
                                  dim - 1));
    }
  }

  std::vector<double> values;
  TabularDataset data;
  int line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = SplitLine(line);
    if (cells.size() != header.size()) {
      throw DataError(fmt::format("{}:{}: expected {} fields, found {}", path,
                                  line_number, header.size(), cells.size()));
    }
    for (const auto& [index, column] : feature_columns) {
      values.push_back(ParseDouble(cells[column], path, line_number));
    }
    data.labels.push_back(ParseIndex(cells[y_column], path, line_number, "y"));
    data.groups.push_back(ParseIndex(cells[z_column], path, line_number, "z"));
  }
  const auto rows = static_cast<Eigen::Index>(data.labels.size());
  data.features = Eigen::Map<Matrix>(values.data(), rows, dim);
  return data;
}

void WriteDatasetCsv(const TabularDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  for (int j = 0; j < data.dim(); ++j) out << 'f' << j << ',';
  out << "y,z\n";
  for (int i = 0; i < data.rows(); ++i) {
    for (int j = 0; j < data.dim(); ++j) {
      out << fmt::format("{},", data.features(i, j));
    }
    out << data.labels[i] << ',' << data.groups[i] << '\n';
  }
}

std::pair<std::vector<int>, std::vector<int>> StratifiedSplit(
    const std::vector<int>& strata, double holdout_fraction, std::uint64_t seed) {
  std::map<int, std::vector<int>> by_stratum;
  for (int i = 0; i < static_cast<int>(strata.size()); ++i) {
    by_stratum[strata[i]].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<int> train;
  std::vector<int> held_out;
  for (auto& [stratum, rows] : by_stratum) {
    std::shuffle(rows.begin(), rows.end(), rng);
    int n_out = static_cast<int>(std::lround(holdout_fraction * rows.size()));
    if (rows.size() >= 2) {
      n_out = std::clamp(n_out, 1, static_cast<int>(rows.size()) - 1);
    } else {
      n_out = 0;
    }
    held_out.insert(held_out.end(), rows.begin(), rows.begin() + n_out);
    train.insert(train.end(), rows.begin() + n_out, rows.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(held_out.begin(), held_out.end());
  return {train, held_out};
}

}  // namespace unlearn
