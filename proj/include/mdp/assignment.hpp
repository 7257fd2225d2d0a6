#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mdp/core.hpp"

namespace mdp {

/// Dense row-major cost matrix. In the tracker, rows are Lost targets, columns
/// are detections and entries are 1 - p_match.
class CostMatrix {
 public:
  CostMatrix() = default;
  CostMatrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  CostMatrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      expects(row.size() == cols_, "CostMatrix: ragged initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Partial row -> column map; -1 marks an unassigned row.
struct Assignment {
  std::vector<int> row_to_col;

  std::size_t size() const {
    return static_cast<std::size_t>(std::count_if(row_to_col.begin(), row_to_col.end(), [](int c) { return c >= 0; }));
  }
};

inline double total_cost(const CostMatrix& costs, const Assignment& a) {
  double sum = 0.0;
  for (std::size_t r = 0; r < a.row_to_col.size(); ++r) {
    if (a.row_to_col[r] >= 0) sum += costs(r, static_cast<std::size_t>(a.row_to_col[r]));
  }
  return sum;
}

/// Minimum-cost one-to-one assignment (Kuhn-Munkres with potentials, O(n^3)).
/// Rectangular inputs are padded to square with 1e3 x the largest entry; rows
/// or columns matched to padding come back unassigned, so exactly
/// min(rows, cols) pairs are returned.
inline Assignment hungarian(const CostMatrix& costs) {
  expects(!costs.empty(), "hungarian: empty cost matrix");
  double max_abs = 0.0;
  for (std::size_t r = 0; r < costs.rows(); ++r) {
    for (std::size_t c = 0; c < costs.cols(); ++c) {
      expects(std::isfinite(costs(r, c)), "hungarian: non-finite cost entry");
      max_abs = std::max(max_abs, std::abs(costs(r, c)));
    }
  }
  const std::size_t n = std::max(costs.rows(), costs.cols());
  const double pad = 1e3 * std::max(1.0, max_abs);
  auto cost = [&](std::size_t r, std::size_t c) {
    return (r < costs.rows() && c < costs.cols()) ? costs(r, c) : pad;
  };

  // 1-based potentials u (rows), v (cols); p[j] = row matched to column j.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
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
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment out;
  out.row_to_col.assign(costs.rows(), -1);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t r = p[j] - 1;
    const std::size_t c = j - 1;
    if (r < costs.rows() && c < costs.cols()) out.row_to_col[r] = static_cast<int>(c);
  }
  return out;
}

/// Rows in order each take their cheapest unclaimed column, provided its cost
/// is at most `threshold`. Ties go to the lowest column index.
inline Assignment greedy_associate(const CostMatrix& costs, double threshold) {
  expects(!costs.empty(), "greedy_associate: empty cost matrix");
  Assignment out;
  out.row_to_col.assign(costs.rows(), -1);
  std::vector<char> claimed(costs.cols(), 0);
  for (std::size_t r = 0; r < costs.rows(); ++r) {
    int best = -1;
    for (std::size_t c = 0; c < costs.cols(); ++c) {
      if (claimed[c] || costs(r, c) > threshold) continue;
      if (best < 0 || costs(r, c) < costs(r, static_cast<std::size_t>(best))) best = static_cast<int>(c);
    }
    if (best >= 0) {
      out.row_to_col[r] = best;
      claimed[static_cast<std::size_t>(best)] = 1;
    }
  }
  return out;
}

}  // namespace mdp
