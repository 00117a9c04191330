#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "pcu/error.hpp"
#include "pcu/io.hpp"
#include "pcu/point_cloud.hpp"
#include "pcu/spatial.hpp"

namespace pcu::metrics {

// Squared distance from every query point to its nearest reference point.
inline std::vector<double> nearest_sq_dists(const Points& queries, const Points& reference) {
  const NeighborIndex nn = knn_search(reference, queries, 1, false);
  return nn.sq_dists;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline void require_non_empty(const PointCloud& pred, const PointCloud& gt, const char* what) {
  detail::require(!pred.empty() && !gt.empty(), std::string(what) + ": empty cloud");
}

// Chamfer distance as the average of the two directed mean squared
// nearest-neighbor distances.
inline double cd_metric(const PointCloud& pred, const PointCloud& gt) {
  require_non_empty(pred, gt, "cd_metric");
  return 0.5 * (mean(nearest_sq_dists(pred.positions, gt.positions)) +
                mean(nearest_sq_dists(gt.positions, pred.positions)));
}

// Symmetric Hausdorff distance (not squared).
inline double hd_metric(const PointCloud& pred, const PointCloud& gt) {
  require_non_empty(pred, gt, "hd_metric");
  const auto a = nearest_sq_dists(pred.positions, gt.positions);
  const auto b = nearest_sq_dists(gt.positions, pred.positions);
  return std::sqrt(std::max(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end())));
}

struct AngleError {
  double mean_degrees = 0.0;
  std::vector<double> per_point;  // degrees, one per predicted point
};

// Angle between each predicted normal and the normal of the nearest
// ground-truth point. Orientation matters: opposite normals give 180 degrees.
inline AngleError normal_angle_error(const PointCloud& pred, const PointCloud& gt) {
  require_non_empty(pred, gt, "normal_angle_error");
  const NeighborIndex nn = knn_search(gt.positions, pred.positions, 1, false);
  AngleError out;
  out.per_point.reserve(static_cast<std::size_t>(pred.size()));
  for (Index i = 0; i < pred.size(); ++i) {
    // 2 atan2(|a-b|, |a+b|) equals acos(a.b) for unit vectors and stays exact
    // at 0 and 180 degrees, where acos loses about 1e-8 rad to rounding.
    const Vec3 a = pred.normals.row(i).transpose();
    const Vec3 b = gt.normals.row(nn.index(i, 0)).transpose();
    out.per_point.push_back(2.0 * std::atan2((a - b).norm(), (a + b).norm()) * 180.0 / std::numbers::pi);
  }
  out.mean_degrees = mean(out.per_point);
  return out;
}

// Euclidean distance from every predicted point to its nearest ground-truth point.
inline std::vector<double> deviations(const PointCloud& pred, const PointCloud& gt) {
  require_non_empty(pred, gt, "deviations");
  std::vector<double> d = nearest_sq_dists(pred.positions, gt.positions);
  for (double& v : d) v = std::sqrt(v);
  return d;
}

// Writes `x y z nx ny nz dist` per predicted point.
inline void deviation_export(const PointCloud& pred, const PointCloud& gt, const std::filesystem::path& path) {
  const std::vector<double> d = deviations(pred, gt);
  io::write_xyzn(path, pred, &d);
}

struct Report {
  double cd = 0.0;
  double hd = 0.0;
  double normal_angle_deg = 0.0;
};

inline Report evaluate(const PointCloud& pred, const PointCloud& gt) {
  return {cd_metric(pred, gt), hd_metric(pred, gt), normal_angle_error(pred, gt).mean_degrees};
}

inline std::string to_key_values(const Report& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "cd=%.17g\nhd=%.17g\nnormal_angle_deg=%.17g\n", r.cd, r.hd, r.normal_angle_deg);
  return buf;
}

}  // namespace pcu::metrics
