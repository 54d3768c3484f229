#pragma once

// Rectangular min-cost bipartite assignment (Kuhn-Munkres with potentials).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace hparse {

/// Dense row-major cost matrix.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}
  CostMatrix(std::size_t r, std::size_t c, std::vector<double> v)
      : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != r * c) throw std::invalid_argument("CostMatrix: size mismatch");
  }

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), sorted by row
  double cost = 0.0;
};

namespace detail {

// Solves rows <= cols; returns column index per row. `row_ids`/`col_ids`
// select a sub-problem of `c`.
inline std::vector<std::size_t> solve_short_side(const CostMatrix& c,
                                                 std::span<const std::size_t> row_ids,
                                                 std::span<const std::size_t> col_ids) {
  const std::size_t n = row_ids.size();
  const std::size_t m = col_ids.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = c(row_ids[i0 - 1], col_ids[j - 1]) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
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
  std::vector<std::size_t> col_of_row(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) col_of_row[p[j] - 1] = j - 1;
  }
  return col_of_row;
}

inline double sub_cost(const CostMatrix& c, std::span<const std::size_t> row_ids,
                       std::span<const std::size_t> col_ids) {
  if (row_ids.empty()) return 0.0;
  const auto a = solve_short_side(c, row_ids, col_ids);
  double s = 0.0;
  for (std::size_t i = 0; i < row_ids.size(); ++i) s += c(row_ids[i], col_ids[a[i]]);
  return s;
}

}  // namespace detail

/// Min-cost assignment of min(rows, cols) pairs. Among optimal assignments,
/// each index of the shorter side, in increasing order, receives the smallest
/// partner index that keeps the total optimal. Throws on non-finite costs.
inline Assignment hungarian_match(const CostMatrix& cost) {
  for (double v : cost.values) {
    if (!std::isfinite(v)) throw std::invalid_argument("hungarian_match: non-finite cost");
  }
  Assignment out;
  if (cost.rows == 0 || cost.cols == 0) return out;

  const bool transposed = cost.rows > cost.cols;
  CostMatrix c = cost;
  if (transposed) {
    c = CostMatrix(cost.cols, cost.rows);
    for (std::size_t r = 0; r < cost.rows; ++r)
      for (std::size_t k = 0; k < cost.cols; ++k) c(k, r) = cost(r, k);
  }

  std::vector<std::size_t> rows(c.rows), cols(c.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  for (std::size_t j = 0; j < cols.size(); ++j) cols[j] = j;

  auto assign = detail::solve_short_side(c, rows, cols);
  double optimum = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) optimum += c(i, assign[i]);
  const double tol = 1e-9 * (1.0 + std::abs(optimum));

  // Lexicographic refinement: fix rows in order, preferring lower columns.
  std::vector<std::size_t> free_cols = cols;
  double fixed_cost = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::span<const std::size_t> rest_rows(rows.data() + i + 1, rows.size() - i - 1);
    std::size_t chosen = assign[i];
    for (std::size_t j : free_cols) {
      if (j >= assign[i]) break;
      std::vector<std::size_t> rest_cols;
      rest_cols.reserve(free_cols.size() - 1);
      for (std::size_t k : free_cols)
        if (k != j) rest_cols.push_back(k);
      const double total = fixed_cost + c(i, j) + detail::sub_cost(c, rest_rows, rest_cols);
      if (total <= optimum + tol) {
        chosen = j;
        break;
      }
    }
    fixed_cost += c(i, chosen);
    free_cols.erase(std::find(free_cols.begin(), free_cols.end(), chosen));
    if (chosen != assign[i] && i + 1 < rows.size()) {
      const auto tail = detail::solve_short_side(c, rest_rows, free_cols);
      for (std::size_t k = 0; k < tail.size(); ++k) assign[i + 1 + k] = free_cols[tail[k]];
    }
    assign[i] = chosen;
  }

  out.pairs.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (transposed) {
      out.pairs.emplace_back(assign[i], i);
    } else {
      out.pairs.emplace_back(i, assign[i]);
    }
    out.cost += c(i, assign[i]);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  return out;
}

}  // namespace hparse
