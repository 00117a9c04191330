#pragma once

#include <limits>
#include <vector>

#include <Eigen/Core>

#include "pcu/error.hpp"

namespace pcu {

struct Assignment {
  std::vector<Eigen::Index> row_to_col;
  double cost = 0.0;
};

// Minimum-cost perfect matching on a square cost matrix (Hungarian method with
// potentials, O(n^3)).
inline Assignment solve_assignment(const Eigen::MatrixXd& cost) {
  using Eigen::Index;
  detail::require(cost.rows() == cost.cols(), "solve_assignment: cost matrix must be square");
  const Index n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is a virtual start column.
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> match(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);

  for (Index i = 1; i <= n; ++i) {
    match[0] = i;
    Index col = 0;
    std::vector<double> min_v(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(col)] = 1;
      const Index row = match[static_cast<std::size_t>(col)];
      double delta = inf;
      Index next = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double reduced = cost(row - 1, j - 1) - u[static_cast<std::size_t>(row)] - v[static_cast<std::size_t>(j)];
        if (reduced < min_v[static_cast<std::size_t>(j)]) {
          min_v[static_cast<std::size_t>(j)] = reduced;
          way[static_cast<std::size_t>(j)] = col;
        }
        if (min_v[static_cast<std::size_t>(j)] < delta) {
          delta = min_v[static_cast<std::size_t>(j)];
          next = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          min_v[static_cast<std::size_t>(j)] -= delta;
        }
      }
      col = next;
    } while (match[static_cast<std::size_t>(col)] != 0);
    do {
      const Index prev = way[static_cast<std::size_t>(col)];
      match[static_cast<std::size_t>(col)] = match[static_cast<std::size_t>(prev)];
      col = prev;
    } while (col != 0);
  }

  Assignment out;
  out.row_to_col.assign(static_cast<std::size_t>(n), -1);
  for (Index j = 1; j <= n; ++j) {
    if (match[static_cast<std::size_t>(j)] > 0) out.row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  // Sum the matched entries directly rather than trusting the dual value.
  for (Index i = 0; i < n; ++i) out.cost += cost(i, out.row_to_col[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace pcu
