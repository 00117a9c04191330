#pragma once

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pcu/error.hpp"
#include "pcu/point_cloud.hpp"
#include "pcu/random.hpp"

namespace pcu {

// Largest pairwise distance. Quadratic; fine for patch-sized clouds.
inline double diameter(const Points& p) {
  double best = 0.0;
  for (Index i = 0; i < p.rows(); ++i) {
    for (Index j = i + 1; j < p.rows(); ++j) best = std::max(best, (p.row(i) - p.row(j)).squaredNorm());
  }
  return std::sqrt(best);
}

// Density-varying subsample: points close to a random anchor are kept less
// often. Keep weight of point i is eps + |p_i - anchor| with eps = 0.05 *
// diameter; m points are drawn without replacement (Efraimidis-Spirakis
// keys). Returned in ascending source order, so m == n is the identity.
inline std::vector<Index> nonuniform_downsample_indices(const PointCloud& cloud, Index m, std::uint64_t rng_seed) {
  const Index n = cloud.size();
  detail::require(m >= 0, "nonuniform_downsample: m must be non-negative");
  detail::require(m <= n, "nonuniform_downsample: m=" + std::to_string(m) + " exceeds n=" + std::to_string(n));
  Rng rng(rng_seed);
  const Index anchor = static_cast<Index>(rng() % static_cast<std::uint64_t>(std::max<Index>(n, 1)));
  const double eps = std::max(0.05 * diameter(cloud.positions), 1e-12);

  std::vector<std::pair<double, Index>> keys(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const double w = eps + (cloud.positions.row(i) - cloud.positions.row(anchor)).norm();
    // log(u)/w orders identically to u^(1/w) without underflow.
    const double u = std::max(uniform01(rng), 1e-300);
    keys[static_cast<std::size_t>(i)] = {std::log(u) / w, i};
  }
  std::partial_sort(keys.begin(), keys.begin() + m, keys.end(), [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  });
  std::vector<Index> out(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) out[static_cast<std::size_t>(i)] = keys[static_cast<std::size_t>(i)].second;
  std::sort(out.begin(), out.end());
  return out;
}

inline PointCloud nonuniform_downsample(const PointCloud& cloud, Index m, std::uint64_t rng_seed) {
  return select(cloud, nonuniform_downsample_indices(cloud, m, rng_seed));
}

struct AugmentConfig {
  bool rotate = true;       // uniform over SO(3)
  double scale_min = 0.8;
  double scale_max = 1.2;
  double shift = 0.1;       // per-axis translation drawn from [-shift, shift]
  double noise_sigma = 0.005;

  static AugmentConfig identity() { return {false, 1.0, 1.0, 0.0, 0.0}; }
};

inline void validate(const AugmentConfig& c) {
  detail::require(c.scale_min > 0.0 && c.scale_max >= c.scale_min, "augment: invalid scale range");
  detail::require(c.shift >= 0.0, "augment: shift must be non-negative");
  detail::require(c.noise_sigma >= 0.0, "augment: noise sigma must be non-negative");
}

// Uniform random rotation from a normalized Gaussian quaternion.
inline Eigen::Matrix3d random_rotation(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Quaterniond q;
  do {
    q = Eigen::Quaterniond(g(rng), g(rng), g(rng), g(rng));
  } while (q.norm() < 1e-9);
  q.normalize();
  return q.toRotationMatrix();
}

// The rigid/similarity part of augmentation, drawn once so it can be shared
// between an input and its target.
struct Similarity {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  double scale = 1.0;
  Vec3 shift = Vec3::Zero();

  PointCloud apply(const PointCloud& c) const {
    PointCloud out;
    out.positions = ((c.positions * rotation.transpose()) * scale).rowwise() + shift.transpose();
    out.normals = c.normals * rotation.transpose();
    return out;
  }
};

inline Similarity draw_similarity(Rng& rng, const AugmentConfig& config) {
  Similarity s;
  if (config.rotate) s.rotation = random_rotation(rng);
  s.scale = uniform(rng, config.scale_min, config.scale_max);
  for (int a = 0; a < 3; ++a) s.shift[a] = uniform(rng, -config.shift, config.shift);
  return s;
}

inline void add_position_noise(PointCloud& cloud, Rng& rng, double sigma) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> g(0.0, sigma);
  for (Index i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) cloud.positions(i, a) += g(rng);
  }
}

// Rotation, uniform scale, translation, then Gaussian position noise.
// Normals are only rotated.
inline PointCloud augment(const PointCloud& cloud, std::uint64_t rng_seed, const AugmentConfig& config) {
  validate(config);
  Rng rng(rng_seed);
  PointCloud out = draw_similarity(rng, config).apply(cloud);
  add_position_noise(out, rng, config.noise_sigma);
  return out;
}

}  // namespace pcu
