#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <string>

#include "pcu/error.hpp"

namespace pcu {

using Index = Eigen::Index;
using Vec3 = Eigen::Vector3d;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

inline constexpr double kNormalTolerance = 1e-3;

// n positions with one unit normal each.
struct PointCloud {
  Points positions;
  Points normals;

  PointCloud() = default;
  PointCloud(Points p, Points n) : positions(std::move(p)), normals(std::move(n)) {}
  explicit PointCloud(Index n) : positions(Points::Zero(n, 3)), normals(Points::Zero(n, 3)) {}

  Index size() const { return positions.rows(); }
  bool empty() const { return positions.rows() == 0; }
};

// Checks the cloud invariants: n >= 1, finite positions, matching normals of
// unit length within kNormalTolerance. Throws ParameterError naming the row.
inline void validate(const PointCloud& cloud, const std::string& what = "point cloud") {
  detail::require(cloud.size() >= 1, what + ": must contain at least one point");
  detail::require(cloud.normals.rows() == cloud.positions.rows(),
                  what + ": positions and normals differ in length");
  for (Index i = 0; i < cloud.size(); ++i) {
    if (!cloud.positions.row(i).allFinite()) {
      throw ParameterError(what + ": non-finite position at row " + std::to_string(i));
    }
    const double len = cloud.normals.row(i).norm();
    if (!(std::abs(len - 1.0) <= kNormalTolerance)) {
      throw ParameterError(what + ": normal at row " + std::to_string(i) +
                           " has length " + std::to_string(len));
    }
  }
}

// Gathers the listed rows of a cloud.
template <typename IndexRange>
PointCloud select(const PointCloud& cloud, const IndexRange& indices) {
  PointCloud out(static_cast<Index>(std::size(indices)));
  Index r = 0;
  for (auto i : indices) {
    out.positions.row(r) = cloud.positions.row(static_cast<Index>(i));
    out.normals.row(r) = cloud.normals.row(static_cast<Index>(i));
    ++r;
  }
  return out;
}

// Rescales every normal to unit length. Zero-length normals become (0,0,1);
// the return value counts them.
inline std::size_t renormalize_normals(Points& normals) {
  std::size_t degenerate = 0;
  for (Index i = 0; i < normals.rows(); ++i) {
    const double len = normals.row(i).norm();
    if (len > 1e-12 && std::isfinite(len)) {
      normals.row(i) /= len;
    } else {
      normals.row(i) << 0.0, 0.0, 1.0;
      ++degenerate;
    }
  }
  return degenerate;
}

// Translation/scale that maps a patch into its unit ball.
struct Normalization {
  Vec3 centroid = Vec3::Zero();
  double scale = 1.0;
};

inline Normalization compute_normalization(const Points& positions) {
  Normalization t;
  if (positions.rows() == 0) return t;
  t.centroid = positions.colwise().mean().transpose();
  double radius = 0.0;
  for (Index i = 0; i < positions.rows(); ++i) {
    radius = std::max(radius, (positions.row(i).transpose() - t.centroid).norm());
  }
  t.scale = radius > 0.0 ? radius : 1.0;
  return t;
}

inline Points apply(const Normalization& t, const Points& positions) {
  return (positions.rowwise() - t.centroid.transpose()) / t.scale;
}

inline Points invert(const Normalization& t, const Points& positions) {
  return (positions * t.scale).rowwise() + t.centroid.transpose();
}

struct NormalizedPatch {
  PointCloud cloud;
  Normalization transform;
};

// Shifts to the centroid and divides by the max radius. Normals untouched.
inline NormalizedPatch normalize_patch(const PointCloud& cloud) {
  detail::require(cloud.size() >= 1, "normalize_patch: empty cloud");
  NormalizedPatch out;
  out.transform = compute_normalization(cloud.positions);
  out.cloud.positions = apply(out.transform, cloud.positions);
  out.cloud.normals = cloud.normals;
  return out;
}

inline PointCloud denormalize_patch(const PointCloud& cloud, const Normalization& t) {
  return PointCloud(invert(t, cloud.positions), cloud.normals);
}

}  // namespace pcu
