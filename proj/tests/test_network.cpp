#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "pcu/checkpoint.hpp"
#include "pcu/gradient_suite.hpp"
#include "pcu/network.hpp"
#include "pcu/shapes.hpp"
#include "pcu/trainer.hpp"

using pcu::Index;
using pcu::PointCloud;
using pcu::ad::Matrix;
namespace net = pcu::net;
namespace ad = pcu::ad;

namespace {

Matrix sphere_input(Index n, std::uint64_t seed) {
  return net::to_input(pcu::normalize_patch(pcu::shapes::sphere(n, seed)).cloud);
}

Matrix permute_rows(const Matrix& m, const std::vector<Index>& perm) {
  Matrix out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
  return out;
}

Matrix global_of(const Matrix& input, const net::NetworkParams& params, const net::NetConfig& config) {
  ad::Tape tape;
  const net::BoundParams bound = net::bind(tape, params, config, false);
  return net::global_features(tape.constant(input), bound).value();
}

Matrix local_of(const Matrix& input, const net::NetworkParams& params, const net::NetConfig& config) {
  ad::Tape tape;
  const net::BoundParams bound = net::bind(tape, params, config, false);
  return net::local_features(tape.constant(input), input.leftCols(3), bound, config.scales).value();
}

std::vector<Index> shuffled(Index n, std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  pcu::Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

}  // namespace

TEST(network, layer_chain) {
  const auto specs = net::layer_specs(net::NetConfig{});
  ASSERT_FALSE(specs.empty());
  EXPECT_EQ(specs.back().fan_out, 6);
  EXPECT_FALSE(specs.back().activate);
  for (const auto& s : specs) {
    if (s.path == "post/mlp0") EXPECT_EQ(s.fan_in, 6 + 128 + 512);
    if (s.path == "global/mlp5") EXPECT_EQ(s.fan_out, 512);
    if (s.path == "local/proj") {
      EXPECT_EQ(s.fan_out, 128);
      EXPECT_TRUE(s.activate);
    }
  }
  const auto widths = net::expand_widths(4);
  ASSERT_EQ(widths.size(), 2u);
  EXPECT_EQ(widths[0], (std::vector<Index>{64, 32}));
  EXPECT_EQ(widths[1], (std::vector<Index>{16, 6}));
}

TEST(network, config_validation) {
  net::NetConfig c;
  c.up_ratio = 3;
  EXPECT_THROW(net::layer_specs(c), pcu::ParameterError);
  c = {};
  c.scales[1].max_samples = 0;
  EXPECT_THROW(net::layer_specs(c), pcu::ParameterError);
  c = {};
  c.up_ratio = 256;
  EXPECT_THROW(net::layer_specs(c), pcu::ParameterError);
}

TEST(network, output_shape) {
  const auto network = net::Network::initialize(net::NetConfig::desk_scale(), 3);
  const Matrix out = network.predict(sphere_input(64, 1));
  EXPECT_EQ(out.rows(), 256);
  EXPECT_EQ(out.cols(), 6);
  for (Index n : {1, 2, 5, 17}) EXPECT_EQ(network.predict(sphere_input(n, 7)).rows(), 4 * n);

  net::NetConfig c2 = net::NetConfig::desk_scale();
  c2.up_ratio = 2;
  EXPECT_EQ(net::Network::initialize(c2, 3).predict(sphere_input(10, 1)).rows(), 20);
}

TEST(network, bad_params_rejected_at_construction) {
  const net::NetConfig config = net::NetConfig::desk_scale();
  net::NetworkParams p = net::init_params(config, 1);
  p.at("post/mlp1").weight = Matrix::Zero(512, 255);
  EXPECT_THROW(net::Network(config, p), pcu::ParameterError);
  p = net::init_params(config, 1);
  p.erase("expand1/mlp1");
  EXPECT_THROW(net::Network(config, p), pcu::ParameterError);
  p = net::init_params(config, 1);
  p.at("global/mlp0").bias = Matrix::Zero(2, 32);
  EXPECT_THROW(net::Network(config, p), pcu::ParameterError);
}

TEST(network, forward_rejects_bad_input) {
  const auto network = net::Network::initialize(net::NetConfig::desk_scale(), 3);
  EXPECT_THROW(network.predict(Matrix::Zero(4, 5)), pcu::ParameterError);
  EXPECT_THROW(network.predict(Matrix::Zero(0, 6)), pcu::ParameterError);
}

TEST(global_features, single_row_duplicates_permutation) {
  const net::NetConfig config = net::NetConfig::desk_scale();
  const net::NetworkParams params = net::init_params(config, 11);
  const Matrix x = sphere_input(20, 4);

  const Matrix g = global_of(x, params, config);
  EXPECT_EQ(g.rows(), 1);
  EXPECT_EQ(g.cols(), 512);

  // n=1: max pool passes the row through.
  ad::Tape tape;
  const auto bound = net::bind(tape, params, config, false);
  const ad::Tensor row = net::apply_chain(tape.constant(Matrix(x.topRows(1))), bound, "global", 6);
  EXPECT_EQ(global_of(x.topRows(1), params, config), row.value());

  Matrix doubled(40, 6);
  doubled << x, x;
  EXPECT_EQ(global_of(doubled, params, config), g);
  EXPECT_EQ(global_of(permute_rows(x, shuffled(20, 5)), params, config), g);
}

TEST(local_features, identical_points_give_equal_rows) {
  const net::NetConfig config = net::NetConfig::desk_scale();
  const net::NetworkParams params = net::init_params(config, 2);
  Matrix x(12, 6);
  for (Index i = 0; i < 12; ++i) x.row(i) << 0.1, -0.2, 0.3, 0, 0, 1;
  const Matrix l = local_of(x, params, config);
  EXPECT_EQ(l.cols(), 128);
  for (Index i = 1; i < 12; ++i) EXPECT_EQ(l.row(i), l.row(0));
}

TEST(local_features, equivariant_under_permutation) {
  const net::NetConfig config = net::NetConfig::desk_scale();
  const net::NetworkParams params = net::init_params(config, 2);
  const Matrix x = sphere_input(48, 9);
  const auto perm = shuffled(48, 1);
  const Matrix l = local_of(x, params, config);
  const Matrix lp = local_of(permute_rows(x, perm), params, config);
  for (Index i = 0; i < 48; ++i) {
    EXPECT_LE((lp.row(i) - l.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(local_features, scales_are_distinct) {
  net::NetConfig narrow = net::NetConfig::desk_scale();
  narrow.scales = {{0.1, 16}};
  net::NetConfig wide = narrow;
  wide.scales = {{0.25, 16}};
  // Same architecture, same weights: only the grouping radius differs.
  const net::NetworkParams params = net::init_params(narrow, 5);
  const Matrix x = sphere_input(128, 3);
  const Matrix a = local_of(x, params, narrow);
  const Matrix b = local_of(x, params, wide);
  EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_GT(a.cwiseAbs().maxCoeff(), 0.0);
}

TEST(network, permutation_equivariance) {
  const auto network = net::Network::initialize(net::NetConfig::desk_scale(), 8);
  const Matrix x = sphere_input(40, 2);
  const auto perm = shuffled(40, 3);
  const Matrix y = network.predict(x);
  const Matrix yp = network.predict(permute_rows(x, perm));
  double worst = 0.0;
  for (Index i = 0; i < 40; ++i) {
    const Index src = perm[static_cast<std::size_t>(i)];
    worst = std::max(worst, (yp.middleRows(4 * i, 4) - y.middleRows(4 * src, 4)).cwiseAbs().maxCoeff());
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(network, duplicated_point_children_coincide) {
  const auto network = net::Network::initialize(net::NetConfig::desk_scale(), 8);
  Matrix x = sphere_input(30, 6);
  x.row(1) = x.row(0);
  const Matrix y = network.predict(x);
  EXPECT_LE((y.middleRows(0, 4) - y.middleRows(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT((y.middleRows(0, 4) - y.middleRows(8, 4)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(network, deterministic_forward) {
  const auto a = net::Network::initialize(net::NetConfig::desk_scale(), 21);
  const auto b = net::Network::initialize(net::NetConfig::desk_scale(), 21);
  const Matrix x = sphere_input(64, 4);
  EXPECT_EQ(a.predict(x), b.predict(x));
  EXPECT_EQ(a.predict(x), a.predict(x));
}

TEST(init_params, same_seed_identical) {
  const net::NetConfig c = net::NetConfig::desk_scale();
  const auto p = net::init_params(c, 4), q = net::init_params(c, 4);
  ASSERT_EQ(p.size(), q.size());
  for (const auto& [path, layer] : p) {
    EXPECT_EQ(layer.weight, q.at(path).weight) << path;
    EXPECT_EQ(layer.bias, q.at(path).bias) << path;
  }
}

TEST(init_params, different_seeds_differ) {
  const net::NetConfig c = net::NetConfig::desk_scale();
  const auto p = net::init_params(c, 4), q = net::init_params(c, 5);
  EXPECT_NE(p.at("global/mlp0").weight, q.at("global/mlp0").weight);
  EXPECT_NE(p.at("local/scale0/mlp0").weight, q.at("local/scale0/mlp0").weight);
}

TEST(init_params, distribution) {
  const auto params = net::init_params(net::NetConfig{}, 17);
  for (const auto& [path, layer] : params) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.rows()));
    EXPECT_LE(layer.weight.cwiseAbs().maxCoeff(), bound) << path;
    EXPECT_TRUE(layer.bias.isZero(0.0)) << path;
  }
  const Matrix& w = params.at("post/mlp0").weight;  // 646 x 512
  const double b = 1.0 / std::sqrt(646.0);
  EXPECT_NEAR(w.mean(), 0.0, 0.01 * b);
  EXPECT_NEAR(w.cwiseAbs().mean(), 0.5 * b, 0.01 * b);
}

TEST(init_params, forward_finite_and_bounded) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (const net::NetConfig& c : {net::NetConfig{}, net::NetConfig::desk_scale()}) {
      const Matrix y = net::Network::initialize(c, seed).predict(sphere_input(128, seed + 100));
      EXPECT_TRUE(y.allFinite());
      EXPECT_LT(y.cwiseAbs().maxCoeff(), 10.0);
    }
  }
}

TEST(predict_normalized, examples) {
  Matrix out(3, 6);
  out << 1, 2, 3, 0, 0, 2,
         4, 5, 6, 0, 0, 0,
         7, 8, 9, 0.6, 0.8, 0;
  const net::Prediction p = net::predict_normalized(out);
  EXPECT_EQ(p.cloud.positions, out.leftCols(3));
  EXPECT_EQ(p.cloud.normals.row(0), Eigen::RowVector3d(0, 0, 1));
  EXPECT_EQ(p.cloud.normals.row(1), Eigen::RowVector3d(0, 0, 1));
  EXPECT_LE((p.cloud.normals.row(2) - Eigen::RowVector3d(0.6, 0.8, 0)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(p.degenerate_normals, 1u);
  EXPECT_THROW(net::predict_normalized(Matrix::Zero(2, 5)), pcu::ParameterError);
}

TEST(network, every_parameter_gets_gradient) {
  pcu::TrainConfig config;
  config.input_size = 32;
  const PointCloud gt = pcu::shapes::sphere(128, 1);
  config.augment = false;
  const pcu::TrainingPair pair = pcu::make_training_pair(gt, config, 2);
  const auto params = net::init_params(config.net_config(), 3);
  const auto r = pcu::sample_gradient(params, config.net_config(), pair, config.weights, config.k);
  ASSERT_EQ(r.grads.size(), params.size());
  for (const auto& [path, g] : r.grads) {
    EXPECT_GT(g.weight.cwiseAbs().maxCoeff(), 0.0) << path;
    EXPECT_GT(g.bias.cwiseAbs().maxCoeff(), 0.0) << path;
    EXPECT_TRUE(g.weight.allFinite()) << path;
  }
}

TEST(network, finite_difference_every_tensor) {
  pcu::GradientSuiteOptions o;
  o.instances = 2;
  const auto result = pcu::run_gradient_suite(77, o);
  std::size_t network_cases = 0;
  for (const auto& c : result.cases) {
    if (c.name.rfind("network:", 0) != 0) continue;
    ++network_cases;
    EXPECT_TRUE(c.passed) << c.name << " instance " << c.instance << " deviation " << c.report.max_deviation;
    EXPECT_GT(c.report.checked, 0) << c.name;
  }
  EXPECT_EQ(network_cases, 2 * 2 * net::layer_specs(net::NetConfig::desk_scale()).size());
}

TEST(checkpoint, round_trip_is_bit_exact) {
  pcu::Checkpoint c;
  c.config = net::NetConfig::desk_scale();
  c.config.patch_size = 64;
  c.params = net::init_params(c.config, 31);
  for (auto& [path, l] : c.params) l.bias.setConstant(1.0 / 3.0);
  c.adam = pcu::make_adam_state(c.params);
  c.adam->step = 7;
  c.adam->m.at("global/mlp0").weight(0, 0) = -1e-300;
  c.epoch = 12;

  std::stringstream s;
  pcu::write_checkpoint(s, c);
  const pcu::Checkpoint back = pcu::read_checkpoint(s);
  EXPECT_EQ(back.epoch, 12);
  EXPECT_EQ(back.config.patch_size, 64);
  EXPECT_EQ(back.config.up_ratio, 4);
  ASSERT_EQ(back.config.scales.size(), 4u);
  EXPECT_EQ(back.config.scales[2].radius, 0.2);
  EXPECT_EQ(back.config.scales[2].max_samples, 16);
  ASSERT_TRUE(back.adam.has_value());
  EXPECT_EQ(back.adam->step, 7);
  for (const auto& [path, l] : c.params) {
    EXPECT_EQ(back.params.at(path).weight, l.weight) << path;
    EXPECT_EQ(back.params.at(path).bias, l.bias) << path;
    EXPECT_EQ(back.adam->m.at(path).weight, c.adam->m.at(path).weight) << path;
  }
}

TEST(checkpoint, without_optimizer_state) {
  pcu::Checkpoint c;
  c.config = net::NetConfig::desk_scale();
  c.params = net::init_params(c.config, 1);
  std::stringstream s;
  pcu::write_checkpoint(s, c);
  const auto back = pcu::read_checkpoint(s);
  EXPECT_FALSE(back.adam.has_value());
  EXPECT_THROW(pcu::Trainer::state_from(back), pcu::ParameterError);
}

TEST(checkpoint, rejects_malformed) {
  pcu::Checkpoint c;
  c.config = net::NetConfig::desk_scale();
  c.params = net::init_params(c.config, 1);
  std::stringstream s;
  pcu::write_checkpoint(s, c);
  const std::string good = s.str();

  auto load = [](const std::string& text) {
    std::istringstream in(text);
    return pcu::read_checkpoint(in);
  };
  EXPECT_NO_THROW(load(good));
  EXPECT_THROW(load("hello 1\nend\n"), pcu::IoError);
  EXPECT_THROW(load("pcu-checkpoint 2\nend\n"), pcu::IoError);
  EXPECT_THROW(load(good.substr(0, good.size() - 4)), pcu::IoError);                // no end marker
  EXPECT_THROW(load(good.substr(0, good.size() / 2)), pcu::IoError);                // truncated tensor
  EXPECT_THROW(load("bogus 1\n" + good.substr(good.find('\n') + 1)), pcu::IoError);  // header

  std::string wrong_shape = good;
  const std::string tag = "tensor param/post/mlp1/bias 1 256";
  const auto at = wrong_shape.find(tag);
  ASSERT_NE(at, std::string::npos);
  wrong_shape.replace(at, tag.size(), "tensor param/post/mlp1/bias 2 128");
  EXPECT_THROW(load(wrong_shape), pcu::IoError);

  std::string extra_scale = good;
  extra_scale.replace(extra_scale.find("scales 4"), 8, "scales 5");
  EXPECT_THROW(load(extra_scale), pcu::IoError);

  std::string unknown = good;
  unknown.insert(unknown.find("tensor"), "color red\n");
  EXPECT_THROW(load(unknown), pcu::IoError);
}
