#pragma once

// Compound point/normal loss suite. Every loss exists in two forms: a plain
// evaluation on point clouds and a differentiable op recorded on an autodiff
// tape. Both run through the same kernel, which returns the value and,
// optionally, the analytic gradient. Neighbor sets and nearest-point pairings
// are recomputed per call and treated as constants of the current iterate.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "pcu/assignment.hpp"
#include "pcu/autodiff.hpp"
#include "pcu/error.hpp"
#include "pcu/point_cloud.hpp"
#include "pcu/spatial.hpp"

namespace pcu::loss {

inline constexpr Index kDefaultK = 15;

struct LossWeights {
  double w1 = 1.0;     // chamfer
  double w2 = 0.1;     // point knn
  double w3 = 0.05;    // normal l2
  double w4 = 0.0001;  // normal orthogonality
  double w5 = 0.0001;  // normal knn
};

inline void validate(const LossWeights& w) {
  for (double v : {w.w1, w.w2, w.w3, w.w4, w.w5}) {
    detail::require(std::isfinite(v) && v >= 0.0, "loss weights must be finite and non-negative");
  }
}

struct LossReport {
  double total = 0.0;
  double cd = 0.0;
  double point_knn = 0.0;
  double normal = 0.0;
  double normal_orth = 0.0;
  double normal_knn = 0.0;
};

inline double weighted_total(const LossReport& r, const LossWeights& w) {
  return w.w1 * r.cd + w.w2 * r.point_knn + w.w3 * r.normal + w.w4 * r.normal_orth + w.w5 * r.normal_knn;
}

// Flat key=value block, one per line.
inline std::string to_key_values(const LossReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "total=%.17g\ncd=%.17g\npoint_knn=%.17g\nnormal=%.17g\nnormal_orth=%.17g\nnormal_knn=%.17g\n",
                r.total, r.cd, r.point_knn, r.normal, r.normal_orth, r.normal_knn);
  return buf;
}

namespace kernel {

// Neighbor indices a kernel selected; the loss is smooth while they stay fixed.
using Selections = std::vector<Index>;

inline void keep(Selections* chosen, const NeighborIndex& nn) {
  if (chosen) chosen->insert(chosen->end(), nn.indices.begin(), nn.indices.end());
}

inline void require_k(Index m, Index k, const char* what) {
  detail::require(k >= 1, std::string(what) + ": k must be at least 1");
  detail::require(m > k, std::string(what) + ": needs more than k=" + std::to_string(k) + " points, got " +
                             std::to_string(m));
}

// Sum over pred of squared distance to the nearest gt point, plus the same
// from gt to pred.
inline double chamfer(const Points& pred, const Points& gt, Points* grad_pred, Selections* chosen = nullptr) {
  detail::require(pred.rows() > 0 && gt.rows() > 0, "chamfer: empty cloud");
  const NeighborIndex forward = knn_search(gt, pred, 1, false);
  const NeighborIndex backward = knn_search(pred, gt, 1, false);
  keep(chosen, forward);
  keep(chosen, backward);
  double value = 0.0;
  for (Index i = 0; i < pred.rows(); ++i) value += forward.sq_dist(i, 0);
  for (Index j = 0; j < gt.rows(); ++j) value += backward.sq_dist(j, 0);
  if (grad_pred) {
    grad_pred->setZero(pred.rows(), 3);
    for (Index i = 0; i < pred.rows(); ++i) grad_pred->row(i) += 2.0 * (pred.row(i) - gt.row(forward.index(i, 0)));
    for (Index j = 0; j < gt.rows(); ++j) {
      const Index i = backward.index(j, 0);
      grad_pred->row(i) += 2.0 * (pred.row(i) - gt.row(j));
    }
  }
  return value;
}

// Mean over points of the summed squared distances to their k nearest
// neighbors within the same cloud.
inline double point_knn(const Points& pred, Index k, Points* grad, Selections* chosen = nullptr) {
  const Index m = pred.rows();
  require_k(m, k, "point_knn");
  const NeighborIndex nn = knn_search(pred, pred, k, true);
  keep(chosen, nn);
  double value = 0.0;
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < k; ++j) value += nn.sq_dist(i, j);
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  if (grad) {
    grad->setZero(m, 3);
    for (Index i = 0; i < m; ++i) {
      for (Index j = 0; j < k; ++j) {
        const Index y = nn.index(i, j);
        const Eigen::RowVector3d d = 2.0 * inv_m * (pred.row(i) - pred.row(y));
        grad->row(i) += d;
        grad->row(y) -= d;
      }
    }
  }
  return value * inv_m;
}

// Mean squared difference between each predicted normal and the normal of the
// ground-truth point nearest to it.
inline double normal_l2(const Points& pred_pos, const Points& pred_nrm, const Points& gt_pos, const Points& gt_nrm,
                        Points* grad_nrm, Selections* chosen = nullptr) {
  detail::require(pred_pos.rows() > 0 && gt_pos.rows() > 0, "normal_l2: empty cloud");
  detail::require(pred_nrm.rows() == pred_pos.rows() && gt_nrm.rows() == gt_pos.rows(),
                  "normal_l2: normals and positions differ in length");
  const Index m = pred_pos.rows();
  const NeighborIndex pair = knn_search(gt_pos, pred_pos, 1, false);
  keep(chosen, pair);
  const double inv_m = 1.0 / static_cast<double>(m);
  double value = 0.0;
  if (grad_nrm) grad_nrm->setZero(m, 3);
  for (Index i = 0; i < m; ++i) {
    const Eigen::RowVector3d d = pred_nrm.row(i) - gt_nrm.row(pair.index(i, 0));
    value += d.squaredNorm();
    if (grad_nrm) grad_nrm->row(i) = 2.0 * inv_m * d;
  }
  return value * inv_m;
}

inline constexpr double kOrthMinDistance = 1e-8;

// Mean over (point, neighbor) pairs of the squared cosine between the
// neighbor offset p_l - p_i and the normal n_l. Pairs closer than
// kOrthMinDistance, or with a zero normal, contribute nothing.
inline double normal_orth(const Points& pos, const Points& nrm, Index k, Points* grad_pos, Points* grad_nrm,
                          Selections* chosen = nullptr) {
  const Index m = pos.rows();
  require_k(m, k, "normal_orth");
  detail::require(nrm.rows() == m, "normal_orth: normals and positions differ in length");
  const NeighborIndex nn = knn_search(pos, pos, k, true);
  keep(chosen, nn);
  const double inv = 1.0 / static_cast<double>(m * k);
  if (grad_pos) grad_pos->setZero(m, 3);
  if (grad_nrm) grad_nrm->setZero(m, 3);
  double value = 0.0;
  for (Index l = 0; l < m; ++l) {
    const Eigen::RowVector3d n = nrm.row(l);
    const double n_len = n.norm();
    if (n_len < 1e-12) continue;
    for (Index j = 0; j < k; ++j) {
      const Index i = nn.index(l, j);
      const Eigen::RowVector3d d = pos.row(l) - pos.row(i);
      const double d_len = d.norm();
      if (d_len < kOrthMinDistance) continue;
      const double cos = d.dot(n) / (d_len * n_len);
      value += cos * cos;
      // d(cos^2) = 2 cos dcos; dcos/dd = n/(|d||n|) - cos d/|d|^2, symmetric for n.
      const double c2 = 2.0 * cos * inv;
      if (grad_pos) {
        const Eigen::RowVector3d gd = c2 * (n / (d_len * n_len) - cos * d / (d_len * d_len));
        grad_pos->row(l) += gd;
        grad_pos->row(i) -= gd;
      }
      if (grad_nrm) grad_nrm->row(l) += c2 * (d / (d_len * n_len) - cos * n / (n_len * n_len));
    }
  }
  return value * inv;
}

// Mean over points of summed squared normal differences to the k nearest
// neighbors (neighborhoods by position).
inline double normal_knn(const Points& pos, const Points& nrm, Index k, Points* grad_nrm,
                         Selections* chosen = nullptr) {
  const Index m = pos.rows();
  require_k(m, k, "normal_knn");
  detail::require(nrm.rows() == m, "normal_knn: normals and positions differ in length");
  const NeighborIndex nn = knn_search(pos, pos, k, true);
  keep(chosen, nn);
  const double inv_m = 1.0 / static_cast<double>(m);
  if (grad_nrm) grad_nrm->setZero(m, 3);
  double value = 0.0;
  for (Index x = 0; x < m; ++x) {
    for (Index j = 0; j < k; ++j) {
      const Index y = nn.index(x, j);
      const Eigen::RowVector3d d = nrm.row(x) - nrm.row(y);
      value += d.squaredNorm();
      if (grad_nrm) {
        grad_nrm->row(x) += 2.0 * inv_m * d;
        grad_nrm->row(y) -= 2.0 * inv_m * d;
      }
    }
  }
  return value * inv_m;
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Plain evaluation

inline double chamfer(const PointCloud& pred, const PointCloud& gt) {
  return kernel::chamfer(pred.positions, gt.positions, nullptr);
}

// Minimum over bijections of the summed (non-squared) distances. Exact.
inline double emd(const PointCloud& pred, const PointCloud& gt) {
  detail::require(pred.size() == gt.size(), "emd: clouds must have equal cardinality (" +
                                                std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) +
                                                ")");
  detail::require(pred.size() > 0, "emd: empty cloud");
  const Index n = pred.size();
  Eigen::MatrixXd cost(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) cost(i, j) = (pred.positions.row(i) - gt.positions.row(j)).norm();
  }
  return solve_assignment(cost).cost;
}

inline double point_knn(const PointCloud& pred, Index k = kDefaultK) {
  return kernel::point_knn(pred.positions, k, nullptr);
}

inline double normal_l2(const PointCloud& pred, const PointCloud& gt) {
  return kernel::normal_l2(pred.positions, pred.normals, gt.positions, gt.normals, nullptr);
}

inline double normal_orth(const PointCloud& pred, Index k = kDefaultK) {
  return kernel::normal_orth(pred.positions, pred.normals, k, nullptr, nullptr);
}

inline double normal_knn(const PointCloud& pred, Index k = kDefaultK) {
  return kernel::normal_knn(pred.positions, pred.normals, k, nullptr);
}

inline LossReport total_loss(const PointCloud& pred, const PointCloud& gt, const LossWeights& w,
                             Index k = kDefaultK) {
  validate(w);
  LossReport r;
  r.cd = chamfer(pred, gt);
  r.point_knn = point_knn(pred, k);
  r.normal = normal_l2(pred, gt);
  r.normal_orth = normal_orth(pred, k);
  r.normal_knn = normal_knn(pred, k);
  r.total = weighted_total(r, w);
  return r;
}

// ---------------------------------------------------------------------------
// Differentiable ops. Position/normal tensors are m x 3.

namespace detail {

inline Points to_points(const ad::Tensor& t, const char* what) {
  pcu::detail::require(t.cols() == 3, std::string(what) + ": expected an m x 3 tensor");
  return t.value();
}

inline ad::Matrix scalar(double v) {
  ad::Matrix out(1, 1);
  out(0, 0) = v;
  return out;
}

inline void note(ad::Tape& tape, const kernel::Selections& chosen) {
  for (Index i : chosen) tape.note_decision(static_cast<std::uint64_t>(i));
}

// Records a 1x1 node whose gradient w.r.t. each input is precomputed.
inline ad::Tensor record_scalar(double value, const kernel::Selections& chosen, const ad::Tensor& a,
                                Points grad_a) {
  note(a.tape(), chosen);
  return a.tape().record(scalar(value), {a}, [a, grad = std::move(grad_a)](ad::Tape& tape, const ad::Matrix& g) {
    tape.accumulate(a, (grad * g(0, 0)).eval());
  });
}

inline ad::Tensor record_scalar(double value, const kernel::Selections& chosen, const ad::Tensor& a,
                                Points grad_a, const ad::Tensor& b, Points grad_b) {
  note(a.tape(), chosen);
  return a.tape().record(scalar(value), {a, b},
                         [a, b, ga = std::move(grad_a), gb = std::move(grad_b)](ad::Tape& tape, const ad::Matrix& g) {
                           tape.accumulate(a, (ga * g(0, 0)).eval());
                           tape.accumulate(b, (gb * g(0, 0)).eval());
                         });
}

}  // namespace detail

inline ad::Tensor chamfer(const ad::Tensor& pred_pos, const Points& gt) {
  const Points p = detail::to_points(pred_pos, "chamfer");
  Points g;
  kernel::Selections chosen;
  const double v = kernel::chamfer(p, gt, &g, &chosen);
  return detail::record_scalar(v, chosen, pred_pos, std::move(g));
}

inline ad::Tensor point_knn(const ad::Tensor& pred_pos, Index k = kDefaultK) {
  const Points p = detail::to_points(pred_pos, "point_knn");
  Points g;
  kernel::Selections chosen;
  const double v = kernel::point_knn(p, k, &g, &chosen);
  return detail::record_scalar(v, chosen, pred_pos, std::move(g));
}

// Gradient flows to the normals only; positions define the pairing.
inline ad::Tensor normal_l2(const ad::Tensor& pred_pos, const ad::Tensor& pred_nrm, const PointCloud& gt) {
  const Points p = detail::to_points(pred_pos, "normal_l2");
  const Points n = detail::to_points(pred_nrm, "normal_l2");
  Points g;
  kernel::Selections chosen;
  const double v = kernel::normal_l2(p, n, gt.positions, gt.normals, &g, &chosen);
  return detail::record_scalar(v, chosen, pred_nrm, std::move(g));
}

inline ad::Tensor normal_orth(const ad::Tensor& pred_pos, const ad::Tensor& pred_nrm, Index k = kDefaultK) {
  const Points p = detail::to_points(pred_pos, "normal_orth");
  const Points n = detail::to_points(pred_nrm, "normal_orth");
  Points gp, gn;
  kernel::Selections chosen;
  const double v = kernel::normal_orth(p, n, k, &gp, &gn, &chosen);
  return detail::record_scalar(v, chosen, pred_pos, std::move(gp), pred_nrm, std::move(gn));
}

inline ad::Tensor normal_knn(const ad::Tensor& pred_pos, const ad::Tensor& pred_nrm, Index k = kDefaultK) {
  const Points p = detail::to_points(pred_pos, "normal_knn");
  const Points n = detail::to_points(pred_nrm, "normal_knn");
  Points g;
  kernel::Selections chosen;
  const double v = kernel::normal_knn(p, n, k, &g, &chosen);
  return detail::record_scalar(v, chosen, pred_nrm, std::move(g));
}

struct TotalLoss {
  ad::Tensor total;
  LossReport report;
};

// Weighted compound loss of an m x 6 prediction (positions | normals) against
// ground truth. Normals are consumed raw; no renormalization happens here.
inline TotalLoss total_loss(const ad::Tensor& pred, const PointCloud& gt, const LossWeights& w,
                            Index k = kDefaultK) {
  validate(w);
  pcu::detail::require(pred.cols() == 6, "total_loss: prediction must be m x 6");
  const ad::Tensor pos = ad::slice_cols(pred, 0, 3);
  const ad::Tensor nrm = ad::slice_cols(pred, 3, 3);
  const ad::Tensor cd = chamfer(pos, gt.positions);
  const ad::Tensor pk = point_knn(pos, k);
  const ad::Tensor nl = normal_l2(pos, nrm, gt);
  const ad::Tensor no = normal_orth(pos, nrm, k);
  const ad::Tensor nk = normal_knn(pos, nrm, k);

  TotalLoss out;
  out.total = cd * w.w1 + pk * w.w2 + nl * w.w3 + no * w.w4 + nk * w.w5;
  out.report.cd = cd.item();
  out.report.point_knn = pk.item();
  out.report.normal = nl.item();
  out.report.normal_orth = no.item();
  out.report.normal_knn = nk.item();
  out.report.total = out.total.item();
  return out;
}

}  // namespace pcu::loss
