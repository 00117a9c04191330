#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>

#include "pcu/error.hpp"
#include "pcu/point_cloud.hpp"
#include "pcu/random.hpp"

namespace pcu::shapes {

inline constexpr double kTorusMajor = 1.0;
inline constexpr double kTorusMinor = 0.3;

// Unit sphere; the normal equals the position.
inline PointCloud sphere(Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  PointCloud c(n);
  for (Index i = 0; i < n; ++i) {
    Vec3 v;
    do {
      v = Vec3(g(rng), g(rng), g(rng));
    } while (v.norm() < 1e-9);
    v.normalize();
    c.positions.row(i) = v;
    c.normals.row(i) = v;
  }
  return c;
}

// Square [-1,1]^2 in the z = 0 plane.
inline PointCloud plane(Index n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud c(n);
  for (Index i = 0; i < n; ++i) {
    c.positions.row(i) << uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), 0.0;
    c.normals.row(i) << 0.0, 0.0, 1.0;
  }
  return c;
}

inline Vec3 torus_point(double tube_angle, double axis_angle) {
  const double ring = kTorusMajor + kTorusMinor * std::cos(tube_angle);
  return {ring * std::cos(axis_angle), ring * std::sin(axis_angle), kTorusMinor * std::sin(tube_angle)};
}

inline Vec3 torus_normal(double tube_angle, double axis_angle) {
  return {std::cos(tube_angle) * std::cos(axis_angle), std::cos(tube_angle) * std::sin(axis_angle),
          std::sin(tube_angle)};
}

// Torus around the z axis, uniform by surface area (rejection on the tube angle).
inline PointCloud torus(Index n, std::uint64_t seed) {
  Rng rng(seed);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  PointCloud c(n);
  for (Index i = 0; i < n; ++i) {
    double tube = 0.0;
    do {
      tube = uniform(rng, 0.0, two_pi);
    } while (uniform01(rng) * (kTorusMajor + kTorusMinor) > kTorusMajor + kTorusMinor * std::cos(tube));
    const double axis = uniform(rng, 0.0, two_pi);
    c.positions.row(i) = torus_point(tube, axis);
    c.normals.row(i) = torus_normal(tube, axis);
  }
  return c;
}

// Surface of [-1,1]^3 with face normals.
inline PointCloud cube(Index n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud c(n);
  for (Index i = 0; i < n; ++i) {
    const int face = static_cast<int>(rng() % 6);
    const int axis = face / 2;
    const double sign = face % 2 == 0 ? 1.0 : -1.0;
    Vec3 p(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
    p[axis] = sign;
    Vec3 nrm = Vec3::Zero();
    nrm[axis] = sign;
    c.positions.row(i) = p;
    c.normals.row(i) = nrm;
  }
  return c;
}

inline PointCloud by_name(std::string_view name, Index n, std::uint64_t seed) {
  if (name == "sphere") return sphere(n, seed);
  if (name == "plane") return plane(n, seed);
  if (name == "torus") return torus(n, seed);
  if (name == "cube") return cube(n, seed);
  throw ParameterError("unknown shape '" + std::string(name) + "' (expected sphere, plane, torus or cube)");
}

}  // namespace pcu::shapes
