#pragma once

// Finite-difference verification of every differentiable loss and of the full
// network. Shared by the test suite and the `gradcheck` command.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pcu/gradcheck.hpp"
#include "pcu/losses.hpp"
#include "pcu/network.hpp"
#include "pcu/random.hpp"
#include "pcu/shapes.hpp"

namespace pcu {

struct GradientCase {
  std::string name;
  Index instance = 0;
  Index points = 0;
  ad::FdReport report;
  bool passed = false;
};

struct GradientSuiteOptions {
  Index instances = 20;
  double tolerance = 1e-4;
  Index min_points = 8;
  Index max_points = 32;
  bool network = true;
  Index network_points = 16;
  // Sampled elements per parameter tensor and network instance.
  Index samples_per_tensor = 3;
};

struct GradientSuiteResult {
  std::vector<GradientCase> cases;

  bool passed() const {
    return std::all_of(cases.begin(), cases.end(), [](const GradientCase& c) { return c.passed; });
  }
  double worst() const {
    double w = 0.0;
    for (const auto& c : cases) w = std::max(w, c.report.max_deviation);
    return w;
  }
};

namespace detail {

inline ad::Matrix gaussian_matrix(Index rows, Index cols, Rng& rng, double sigma) {
  std::normal_distribution<double> g(0.0, sigma);
  ad::Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

inline ad::Matrix uniform_matrix(Index rows, Index cols, Rng& rng, double lo, double hi) {
  ad::Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, lo, hi);
  return m;
}

inline GradientCase run_case(std::string name, Index instance, Index points, const ad::ScalarFunction& f,
                             const ad::Matrix& at, const ad::FdOptions& options, double tolerance) {
  GradientCase c;
  c.name = std::move(name);
  c.instance = instance;
  c.points = points;
  c.report = ad::finite_difference_check(f, at, options);
  c.passed = c.report.max_deviation <= tolerance;
  return c;
}

// The five losses and their weighted total on one random instance. Predicted
// normals are raw (not unit) vectors, as the network emits them.
inline void loss_cases(std::uint64_t seed, Index instance, const GradientSuiteOptions& o,
                       std::vector<GradientCase>& out) {
  Rng rng(seed);
  const Index span = o.max_points - o.min_points + 1;
  const Index m = o.min_points + static_cast<Index>(rng() % static_cast<std::uint64_t>(span));
  const Index n = o.min_points + static_cast<Index>(rng() % static_cast<std::uint64_t>(span));
  const Index k = std::min(loss::kDefaultK, m - 1);

  const ad::Matrix pos = uniform_matrix(m, 3, rng, -1.0, 1.0);
  const ad::Matrix nrm = gaussian_matrix(m, 3, rng, 1.0);
  PointCloud gt(n);
  gt.positions = uniform_matrix(n, 3, rng, -1.0, 1.0);
  gt.normals = gaussian_matrix(n, 3, rng, 1.0);
  renormalize_normals(gt.normals);
  ad::Matrix both(m, 6);
  both << pos, nrm;

  const ad::FdOptions fd;
  auto add = [&](const char* name, const ad::ScalarFunction& f, const ad::Matrix& at) {
    out.push_back(run_case(name, instance, m, f, at, fd, o.tolerance));
  };
  add("chamfer", [&](ad::Tape&, const ad::Tensor& x) { return loss::chamfer(x, gt.positions); }, pos);
  add("point_knn", [&](ad::Tape&, const ad::Tensor& x) { return loss::point_knn(x, k); }, pos);
  add("normal_l2", [&](ad::Tape& t, const ad::Tensor& x) { return loss::normal_l2(t.constant(pos), x, gt); }, nrm);
  add("normal_orth", [&](ad::Tape&, const ad::Tensor& x) {
    return loss::normal_orth(ad::slice_cols(x, 0, 3), ad::slice_cols(x, 3, 3), k);
  }, both);
  add("normal_knn", [&](ad::Tape& t, const ad::Tensor& x) { return loss::normal_knn(t.constant(pos), x, k); }, nrm);
  add("total_loss", [&](ad::Tape&, const ad::Tensor& x) { return loss::total_loss(x, gt, {}, k).total; }, both);
}

// total_loss(forward(input)) differentiated w.r.t. sampled elements of every
// parameter tensor, on a small sphere-patch instance. Weights get a gain of
// sqrt(6) so activations keep unit scale through the depth (at plain init the
// output is ~1e-3 and deep gradients drown in roundoff); biases are random.
inline void network_cases(std::uint64_t seed, Index instance, const GradientSuiteOptions& o,
                          std::vector<GradientCase>& out) {
  Rng rng(seed);
  net::NetConfig config = net::NetConfig::desk_scale();
  config.patch_size = o.network_points;
  net::NetworkParams params = net::init_params(config, mix_seed(seed, 1));
  for (auto& [path, layer] : params) {
    layer.weight *= std::sqrt(6.0);
    layer.bias = uniform_matrix(1, layer.bias.cols(), rng, -0.1, 0.1);
  }

  const PointCloud input = normalize_patch(shapes::sphere(o.network_points, mix_seed(seed, 2))).cloud;
  PointCloud gt = shapes::sphere(o.network_points * config.up_ratio, mix_seed(seed, 3));
  const ad::Matrix x = net::to_input(input);
  const Index k = std::min(loss::kDefaultK, o.network_points * config.up_ratio - 1);

  for (const net::LayerSpec& spec : net::layer_specs(config)) {
    for (int part = 0; part < 2; ++part) {
      const bool is_bias = part == 1;
      const ad::Matrix& at = is_bias ? params.at(spec.path).bias : params.at(spec.path).weight;
      auto f = [&](ad::Tape& tape, const ad::Tensor& p) {
        net::BoundParams bound = net::bind(tape, params, config, false);
        (is_bias ? bound.at(spec.path).bias : bound.at(spec.path).weight) = p;
        const ad::Tensor y = net::forward(tape.constant(x), bound, config);
        return loss::total_loss(y, gt, {}, k).total;
      };
      ad::FdOptions fd;
      const Index count = std::min<Index>(o.samples_per_tensor, at.size());
      while (static_cast<Index>(fd.elements.size()) < count) {
        const Index e = static_cast<Index>(rng() % static_cast<std::uint64_t>(at.size()));
        if (std::find(fd.elements.begin(), fd.elements.end(), e) == fd.elements.end()) fd.elements.push_back(e);
      }
      out.push_back(run_case("network:" + spec.path + (is_bias ? "/bias" : "/weight"), instance,
                             o.network_points, f, at, fd, o.tolerance));
    }
  }
}

}  // namespace detail

inline GradientSuiteResult run_gradient_suite(std::uint64_t seed, const GradientSuiteOptions& options = {}) {
  pcu::detail::require(options.instances >= 1, "gradient suite: need at least one instance");
  pcu::detail::require(options.min_points >= 2 && options.max_points >= options.min_points,
                       "gradient suite: invalid point range");
  GradientSuiteResult result;
  for (Index i = 0; i < options.instances; ++i) {
    const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(i));
    detail::loss_cases(s, i, options, result.cases);
    if (options.network) detail::network_cases(mix_seed(s, 0x6e6574), i, options, result.cases);
  }
  return result;
}

}  // namespace pcu
