#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "pcu/error.hpp"
#include "pcu/point_cloud.hpp"

namespace pcu {

// Row r lists the k nearest candidates of query r, ascending by squared
// distance with ties broken by ascending index.
struct NeighborIndex {
  Index queries = 0;
  Index k = 0;
  std::vector<Index> indices;
  std::vector<double> sq_dists;

  Index index(Index row, Index j) const { return indices[static_cast<std::size_t>(row * k + j)]; }
  double sq_dist(Index row, Index j) const { return sq_dists[static_cast<std::size_t>(row * k + j)]; }
};

enum class KnnBackend { kAuto, kExhaustive, kGrid };

inline constexpr Index kExhaustiveLimit = 1024;

namespace detail {

inline double sq_distance(const Points& a, Index i, const Points& b, Index j) {
  const double dx = a(i, 0) - b(j, 0);
  const double dy = a(i, 1) - b(j, 1);
  const double dz = a(i, 2) - b(j, 2);
  return dx * dx + dy * dy + dz * dz;
}

using Candidate = std::pair<double, Index>;  // lexicographic order = (distance, index)

// Keeps the k smallest candidates; top() is the worst kept one.
class BoundedHeap {
 public:
  explicit BoundedHeap(Index k) : k_(static_cast<std::size_t>(k)) { items_.reserve(k_ + 1); }

  void offer(double d, Index i) {
    const Candidate c{d, i};
    if (items_.size() < k_) {
      items_.push_back(c);
      std::push_heap(items_.begin(), items_.end());
    } else if (c < items_.front()) {
      std::pop_heap(items_.begin(), items_.end());
      items_.back() = c;
      std::push_heap(items_.begin(), items_.end());
    }
  }
  bool full() const { return items_.size() == k_; }
  double worst() const { return items_.front().first; }

  void drain_sorted(std::vector<Index>& idx, std::vector<double>& dist) {
    std::sort_heap(items_.begin(), items_.end());
    for (const auto& [d, i] : items_) {
      dist.push_back(d);
      idx.push_back(i);
    }
    items_.clear();
  }

 private:
  std::size_t k_;
  std::vector<Candidate> items_;
};

// Uniform grid over the bounding box of the candidate set. Exact: the query
// expands shells of cells until no unvisited cell can beat the current k-th
// candidate (including the index tie-break).
class UniformGrid {
 public:
  explicit UniformGrid(const Points& points) : points_(points) {
    const Index n = points.rows();
    lo_ = points.colwise().minCoeff().transpose();
    const Vec3 hi = points.colwise().maxCoeff().transpose();
    const Vec3 extent = hi - lo_;
    const double max_extent = std::max(extent.maxCoeff(), 1e-12);
    const double per_axis = std::max(1.0, std::cbrt(static_cast<double>(n) / 2.0));
    cell_ = max_extent / per_axis;
    for (int a = 0; a < 3; ++a) {
      dims_[a] = std::max<Index>(1, static_cast<Index>(std::floor(extent[a] / cell_)) + 1);
    }
    const std::size_t cells = static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]);
    start_.assign(cells + 1, 0);
    std::vector<std::size_t> cell_of(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      cell_of[static_cast<std::size_t>(i)] = linear(cell_coords(points, i));
      ++start_[cell_of[static_cast<std::size_t>(i)] + 1];
    }
    for (std::size_t c = 0; c < cells; ++c) start_[c + 1] += start_[c];
    order_.resize(static_cast<std::size_t>(n));
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (Index i = 0; i < n; ++i) order_[fill[cell_of[static_cast<std::size_t>(i)]]++] = i;
  }

  void query(const Points& queries, Index q, Index skip, BoundedHeap& heap) const {
    const std::array<Index, 3> c = cell_coords(queries, q);
    for (Index r = 0;; ++r) {
      visit_shell(queries, q, c, r, skip, heap);
      double bound = std::numeric_limits<double>::infinity();
      bool exhausted = true;
      for (int a = 0; a < 3; ++a) {
        if (c[a] - r > 0) {
          exhausted = false;
          bound = std::min(bound, queries(q, a) - (lo_[a] + static_cast<double>(c[a] - r) * cell_));
        }
        if (c[a] + r < dims_[a] - 1) {
          exhausted = false;
          bound = std::min(bound, lo_[a] + static_cast<double>(c[a] + r + 1) * cell_ - queries(q, a));
        }
      }
      if (exhausted) return;
      if (heap.full() && heap.worst() < bound * bound) return;
    }
  }

 private:
  std::array<Index, 3> cell_coords(const Points& p, Index i) const {
    std::array<Index, 3> c{};
    for (int a = 0; a < 3; ++a) {
      const double t = std::clamp(std::floor((p(i, a) - lo_[a]) / cell_), 0.0,
                                  static_cast<double>(dims_[a] - 1));
      c[a] = static_cast<Index>(t);
    }
    return c;
  }

  std::size_t linear(const std::array<Index, 3>& c) const {
    return static_cast<std::size_t>((c[2] * dims_[1] + c[1]) * dims_[0] + c[0]);
  }

  void visit_cell(const Points& queries, Index q, const std::array<Index, 3>& c, Index skip,
                  BoundedHeap& heap) const {
    const std::size_t id = linear(c);
    for (std::size_t s = start_[id]; s < start_[id + 1]; ++s) {
      const Index i = order_[s];
      if (i == skip) continue;
      heap.offer(sq_distance(queries, q, points_, i), i);
    }
  }

  void visit_shell(const Points& queries, Index q, const std::array<Index, 3>& c, Index r, Index skip,
                   BoundedHeap& heap) const {
    std::array<Index, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max<Index>(0, c[a] - r);
      hi[a] = std::min<Index>(dims_[a] - 1, c[a] + r);
    }
    for (Index z = lo[2]; z <= hi[2]; ++z) {
      for (Index y = lo[1]; y <= hi[1]; ++y) {
        const bool inner_yz = std::abs(z - c[2]) < r && std::abs(y - c[1]) < r;
        for (Index x = lo[0]; x <= hi[0]; ++x) {
          // Interior cells were visited by earlier shells.
          if (inner_yz && std::abs(x - c[0]) < r) {
            x = std::min(hi[0], c[0] + r - 1);
            continue;
          }
          visit_cell(queries, q, {x, y, z}, skip, heap);
        }
      }
    }
  }

  const Points& points_;
  Vec3 lo_;
  double cell_ = 1.0;
  std::array<Index, 3> dims_{};
  std::vector<std::size_t> start_;
  std::vector<Index> order_;
};

}  // namespace detail

// Exact k-nearest-neighbor search. With exclude_self, query row r never lists
// candidate r (queries are then expected to be the candidate set itself).
inline NeighborIndex knn_search(const Points& points, const Points& queries, Index k, bool exclude_self,
                                KnnBackend backend = KnnBackend::kAuto) {
  const Index n = points.rows();
  detail::require(n > 0, "knn_search: empty point set");
  detail::require(k >= 1, "knn_search: k must be at least 1");
  const Index available = exclude_self ? n - 1 : n;
  detail::require(k <= available, "knn_search: k=" + std::to_string(k) + " exceeds the " +
                                      std::to_string(available) + " available candidates");
  if (backend == KnnBackend::kAuto) {
    backend = n <= kExhaustiveLimit ? KnnBackend::kExhaustive : KnnBackend::kGrid;
  }

  NeighborIndex out;
  out.queries = queries.rows();
  out.k = k;
  out.indices.reserve(static_cast<std::size_t>(out.queries * k));
  out.sq_dists.reserve(static_cast<std::size_t>(out.queries * k));

  detail::BoundedHeap heap(k);
  if (backend == KnnBackend::kExhaustive) {
    for (Index q = 0; q < queries.rows(); ++q) {
      for (Index i = 0; i < n; ++i) {
        if (exclude_self && i == q) continue;
        heap.offer(detail::sq_distance(queries, q, points, i), i);
      }
      heap.drain_sorted(out.indices, out.sq_dists);
    }
  } else {
    const detail::UniformGrid grid(points);
    for (Index q = 0; q < queries.rows(); ++q) {
      grid.query(queries, q, exclude_self ? q : Index{-1}, heap);
      heap.drain_sorted(out.indices, out.sq_dists);
    }
  }
  return out;
}

// Fixed-width neighborhoods: row c holds `width` indices.
struct BallGroups {
  Index centers = 0;
  Index width = 0;
  std::vector<Index> indices;

  Index at(Index center, Index j) const { return indices[static_cast<std::size_t>(center * width + j)]; }
};

// For every center, the (up to max_samples) nearest points within `radius`,
// ordered by distance then index. Short groups are padded by repeating their
// first member; a center with no point in range gets its nearest neighbor.
inline BallGroups ball_query(const Points& points, const Points& centers, double radius, Index max_samples) {
  detail::require(radius > 0.0, "ball_query: radius must be positive");
  detail::require(max_samples >= 1, "ball_query: max_samples must be at least 1");
  detail::require(points.rows() > 0, "ball_query: empty point set");
  const Index k = std::min(max_samples, points.rows());
  const NeighborIndex nn = knn_search(points, centers, k, false);
  const double r2 = radius * radius;

  BallGroups out;
  out.centers = centers.rows();
  out.width = max_samples;
  out.indices.resize(static_cast<std::size_t>(out.centers * max_samples));
  for (Index c = 0; c < out.centers; ++c) {
    Index count = 0;
    for (Index j = 0; j < k; ++j) {
      if (nn.sq_dist(c, j) <= r2) out.indices[static_cast<std::size_t>(c * max_samples + count++)] = nn.index(c, j);
    }
    const Index pad = count > 0 ? out.at(c, 0) : nn.index(c, 0);
    for (Index j = count; j < max_samples; ++j) out.indices[static_cast<std::size_t>(c * max_samples + j)] = pad;
  }
  return out;
}

// Greedy farthest point sampling from seed_index; ties go to the lowest index.
inline std::vector<Index> farthest_point_sample(const Points& points, Index m, Index seed_index = 0) {
  const Index n = points.rows();
  detail::require(m >= 1, "farthest_point_sample: m must be at least 1");
  detail::require(m <= n, "farthest_point_sample: m=" + std::to_string(m) + " exceeds n=" + std::to_string(n));
  detail::require(seed_index >= 0 && seed_index < n, "farthest_point_sample: seed index out of range");

  std::vector<Index> selected;
  selected.reserve(static_cast<std::size_t>(m));
  std::vector<double> min_d(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Index current = seed_index;
  for (Index s = 0; s < m; ++s) {
    selected.push_back(current);
    min_d[static_cast<std::size_t>(current)] = -1.0;
    Index best = -1;
    double best_d = -1.0;
    for (Index i = 0; i < n; ++i) {
      double& d = min_d[static_cast<std::size_t>(i)];
      if (d < 0.0) continue;
      d = std::min(d, detail::sq_distance(points, i, points, current));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    current = best;
  }
  return selected;
}

}  // namespace pcu
