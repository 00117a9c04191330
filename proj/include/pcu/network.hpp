#pragma once

// Point upsampling network: per-point local multi-scale features and a
// max-pooled global feature are concatenated with the input, compressed by a
// shared MLP, then expanded in the point dimension by repeated x2 feature
// reshaping, each step followed by a shared MLP. The last layer regresses
// positions and (unnormalized) normals.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pcu/autodiff.hpp"
#include "pcu/error.hpp"
#include "pcu/point_cloud.hpp"
#include "pcu/random.hpp"
#include "pcu/spatial.hpp"

namespace pcu::net {

using ad::Matrix;
using ad::Tensor;

inline constexpr Index kInputWidth = 6;
inline constexpr Index kLocalWidth = 128;    // l
inline constexpr Index kGlobalWidth = 512;   // g
inline constexpr Index kExpandWidth = 128;   // d, width entering the first reshape
inline const std::vector<Index> kLocalMlp = {32, 64, 128};
inline const std::vector<Index> kGlobalMlp = {32, 64, 64, 128, 256, 512};
inline const std::vector<Index> kPostConcatMlp = {512, 256, 128};

struct ScaleSpec {
  double radius = 0.1;  // in units of the normalized patch radius
  Index max_samples = 16;
};

struct NetConfig {
  Index up_ratio = 4;
  std::vector<ScaleSpec> scales = {{0.05, 8}, {0.1, 16}, {0.2, 32}, {0.3, 32}};
  Index k = 15;            // neighborhood size used by the training losses
  Index patch_size = 128;  // points per input patch

  // Same radii with smaller groups; what the desk-scale training runs use.
  static NetConfig desk_scale() {
    NetConfig c;
    c.scales = {{0.05, 8}, {0.1, 8}, {0.2, 16}, {0.3, 16}};
    return c;
  }
};

inline bool is_power_of_two(Index v) { return v > 0 && (v & (v - 1)) == 0; }

inline Index reshape_stages(Index up_ratio) {
  Index stages = 0;
  for (Index r = up_ratio; r > 1; r /= 2) ++stages;
  return stages;
}

inline void validate(const NetConfig& c) {
  detail::require(c.up_ratio >= 2 && is_power_of_two(c.up_ratio), "NetConfig: up_ratio must be a power of two >= 2");
  detail::require(kExpandWidth % c.up_ratio == 0 && kExpandWidth / c.up_ratio >= 2,
                  "NetConfig: up_ratio " + std::to_string(c.up_ratio) + " does not divide the feature width");
  detail::require(!c.scales.empty(), "NetConfig: at least one grouping scale is required");
  for (const ScaleSpec& s : c.scales) {
    detail::require(s.radius > 0.0, "NetConfig: grouping radius must be positive");
    detail::require(s.max_samples >= 1, "NetConfig: grouping max_samples must be at least 1");
  }
  detail::require(c.k >= 1, "NetConfig: k must be at least 1");
  detail::require(c.patch_size >= 1, "NetConfig: patch_size must be positive");
}

struct Layer {
  Matrix weight;  // fan_in x fan_out
  Matrix bias;    // 1 x fan_out
};

// Layer path -> weights. Ordered so iteration (init, checkpoints) is stable.
using NetworkParams = std::map<std::string, Layer>;

struct LayerSpec {
  std::string path;
  Index fan_in = 0;
  Index fan_out = 0;
  bool activate = true;
};

inline std::string local_path(std::size_t scale, std::size_t layer) {
  return "local/scale" + std::to_string(scale) + "/mlp" + std::to_string(layer);
}
inline std::string chain_path(const std::string& chain, std::size_t layer) {
  return chain + "/mlp" + std::to_string(layer);
}
inline std::string expand_chain(std::size_t stage) { return "expand" + std::to_string(stage); }

// Widths of the shared MLP after each x2 reshape: (w, w/2) at every stage but
// the last, which regresses to 6. For up_ratio 4: (64, 32) then (16, 6).
inline std::vector<std::vector<Index>> expand_widths(Index up_ratio) {
  std::vector<std::vector<Index>> out;
  Index width = kExpandWidth;
  const Index stages = reshape_stages(up_ratio);
  for (Index s = 0; s < stages; ++s) {
    width /= 2;
    out.push_back(s + 1 == stages ? std::vector<Index>{width, kInputWidth} : std::vector<Index>{width, width / 2});
    width = out.back().back();
  }
  return out;
}

// Every layer of the architecture, in forward order. Activation is relu except
// on the last layer of each chain; the local projection keeps its relu.
inline std::vector<LayerSpec> layer_specs(const NetConfig& config) {
  validate(config);
  std::vector<LayerSpec> specs;
  auto chain = [&](auto path_of, Index fan_in, const std::vector<Index>& widths) {
    for (std::size_t j = 0; j < widths.size(); ++j) {
      specs.push_back({path_of(j), fan_in, widths[j], j + 1 < widths.size()});
      fan_in = widths[j];
    }
  };
  for (std::size_t s = 0; s < config.scales.size(); ++s) {
    chain([s](std::size_t j) { return local_path(s, j); }, kInputWidth + 3, kLocalMlp);
  }
  specs.push_back({"local/proj", static_cast<Index>(config.scales.size()) * kLocalMlp.back(), kLocalWidth, true});
  chain([](std::size_t j) { return chain_path("global", j); }, kInputWidth, kGlobalMlp);
  chain([](std::size_t j) { return chain_path("post", j); }, kInputWidth + kLocalWidth + kGlobalWidth,
        kPostConcatMlp);
  const auto stages = expand_widths(config.up_ratio);
  Index width = kExpandWidth;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    width /= 2;
    chain([s](std::size_t j) { return chain_path(expand_chain(s), j); }, width, stages[s]);
    width = stages[s].back();
  }
  return specs;
}

// Checks that params hold exactly the layers of the architecture with the
// right shapes, so that the whole dimension chain is consistent.
inline void validate(const NetworkParams& params, const NetConfig& config) {
  const auto specs = layer_specs(config);
  detail::require(params.size() == specs.size(), "network params: expected " + std::to_string(specs.size()) +
                                                     " layers, found " + std::to_string(params.size()));
  for (const LayerSpec& s : specs) {
    auto it = params.find(s.path);
    detail::require(it != params.end(), "network params: missing layer " + s.path);
    const Layer& l = it->second;
    detail::require(l.weight.rows() == s.fan_in && l.weight.cols() == s.fan_out,
                    "network params: " + s.path + " weight is " + std::to_string(l.weight.rows()) + "x" +
                        std::to_string(l.weight.cols()) + ", expected " + std::to_string(s.fan_in) + "x" +
                        std::to_string(s.fan_out));
    detail::require(l.bias.rows() == 1 && l.bias.cols() == s.fan_out, "network params: " + s.path + " bias shape");
  }
}

// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
inline NetworkParams init_params(const NetConfig& config, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  NetworkParams params;
  for (const LayerSpec& s : layer_specs(config)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
    Layer l;
    l.weight.resize(s.fan_in, s.fan_out);
    for (Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = uniform(rng, -bound, bound);
    l.bias = Matrix::Zero(1, s.fan_out);
    params.emplace(s.path, std::move(l));
  }
  return params;
}

inline Index parameter_count(const NetworkParams& params) {
  Index n = 0;
  for (const auto& [path, l] : params) n += l.weight.size() + l.bias.size();
  return n;
}

// Parameters registered on a tape for one forward pass.
struct BoundLayer {
  Tensor weight;
  Tensor bias;
  bool activate = true;
};
using BoundParams = std::map<std::string, BoundLayer>;

inline BoundParams bind(ad::Tape& tape, const NetworkParams& params, const NetConfig& config, bool trainable) {
  BoundParams out;
  for (const LayerSpec& s : layer_specs(config)) {
    const Layer& l = params.at(s.path);
    BoundLayer b;
    b.weight = trainable ? tape.leaf(l.weight) : tape.constant(l.weight);
    b.bias = trainable ? tape.leaf(l.bias) : tape.constant(l.bias);
    b.activate = s.activate;
    out.emplace(s.path, b);
  }
  return out;
}

// Gradients of every bound layer, shaped like the parameters.
inline NetworkParams collect_gradients(const BoundParams& bound) {
  NetworkParams grads;
  for (const auto& [path, b] : bound) {
    grads.emplace(path, Layer{b.weight.grad(), b.bias.grad()});
  }
  return grads;
}

inline Tensor apply_layer(const Tensor& x, const BoundParams& bound, const std::string& path) {
  const BoundLayer& l = bound.at(path);
  return ad::dense(x, l.weight, l.bias, l.activate);
}

inline Tensor apply_chain(Tensor x, const BoundParams& bound, const std::string& chain, std::size_t depth) {
  for (std::size_t j = 0; j < depth; ++j) x = apply_layer(x, bound, chain_path(chain, j));
  return x;
}

// Shared MLP over every point, then a column-wise max over all n points: 1 x g.
inline Tensor global_features(const Tensor& input, const BoundParams& bound) {
  pcu::detail::require(input.rows() >= 1 && input.cols() == kInputWidth, "global_features: input must be n x 6");
  const Tensor per_point = apply_chain(input, bound, "global", kGlobalMlp.size());
  return ad::max_over_groups(per_point, input.rows());
}

// Multi-scale grouping with every point as a center. For each scale a ball
// query gathers neighbors; each neighbor contributes its input features and
// its offset from the center; a shared MLP and a max over the group give one
// row per center. Scales are concatenated and projected to width l.
inline Tensor local_features(const Tensor& input, const Points& positions, const BoundParams& bound,
                             const std::vector<ScaleSpec>& scales) {
  const Index n = input.rows();
  pcu::detail::require(input.cols() == kInputWidth, "local_features: input must be n x 6");
  pcu::detail::require(positions.rows() == n, "local_features: positions do not match input rows");
  ad::Tape& tape = input.tape();
  std::vector<Tensor> per_scale;
  per_scale.reserve(scales.size());
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const BallGroups groups = ball_query(positions, positions, scales[s].radius, scales[s].max_samples);
    const Index width = groups.width;
    Matrix offsets(n * width, 3);
    for (Index c = 0; c < n; ++c) {
      for (Index j = 0; j < width; ++j) {
        offsets.row(c * width + j) = positions.row(groups.at(c, j)) - positions.row(c);
      }
    }
    const Tensor neighbor_features = ad::gather_rows(input, groups.indices);
    const Tensor grouped = ad::concat_cols({neighbor_features, tape.constant(std::move(offsets))});
    Tensor h = grouped;
    for (std::size_t j = 0; j < kLocalMlp.size(); ++j) h = apply_layer(h, bound, local_path(s, j));
    per_scale.push_back(ad::max_over_groups(h, width));
  }
  return apply_layer(ad::concat_cols(per_scale), bound, "local/proj");
}

// n x 6 input -> (up_ratio * n) x 6 output. Input row r owns output rows
// r*up_ratio .. r*up_ratio + up_ratio - 1.
inline Tensor forward(const Tensor& input, const BoundParams& bound, const NetConfig& config) {
  pcu::detail::require(input.rows() >= 1 && input.cols() == kInputWidth, "forward: input must be n x 6");
  const Index n = input.rows();
  const Points positions = input.value().leftCols(3);

  const Tensor local = local_features(input, positions, bound, config.scales);
  const Tensor global = global_features(input, bound);
  const Tensor global_rows = ad::gather_rows(global, std::vector<Index>(static_cast<std::size_t>(n), 0));
  Tensor x = ad::concat_cols({input, local, global_rows});
  x = apply_chain(x, bound, "post", kPostConcatMlp.size());
  const auto stages = expand_widths(config.up_ratio);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    x = ad::reshape_rows(x, 2);
    x = apply_chain(x, bound, expand_chain(s), stages[s].size());
  }
  return x;
}

// Owns a validated configuration/parameter pair.
class Network {
 public:
  Network(NetConfig config, NetworkParams params) : config_(std::move(config)), params_(std::move(params)) {
    validate(params_, config_);
  }

  static Network initialize(const NetConfig& config, std::uint64_t rng_seed) {
    return Network(config, init_params(config, rng_seed));
  }

  const NetConfig& config() const { return config_; }
  const NetworkParams& params() const { return params_; }
  NetworkParams& params() { return params_; }

  // Inference-only forward pass on an n x 6 matrix.
  Matrix predict(const Matrix& input) const {
    ad::Tape tape;
    const BoundParams bound = bind(tape, params_, config_, false);
    return forward(tape.constant(input), bound, config_).value();
  }

 private:
  NetConfig config_;
  NetworkParams params_;
};

inline Matrix to_input(const PointCloud& cloud) {
  Matrix m(cloud.size(), kInputWidth);
  m.leftCols(3) = cloud.positions;
  m.rightCols(3) = cloud.normals;
  return m;
}

struct Prediction {
  PointCloud cloud;
  std::size_t degenerate_normals = 0;
};

// Splits a raw m x 6 output into positions and unit normals. Zero-length
// normals become (0,0,1) and are counted.
inline Prediction predict_normalized(const Matrix& output) {
  pcu::detail::require(output.cols() == kInputWidth, "predict_normalized: output must be m x 6");
  Prediction p;
  p.cloud.positions = output.leftCols(3);
  p.cloud.normals = output.rightCols(3);
  p.degenerate_normals = renormalize_normals(p.cloud.normals);
  return p;
}

}  // namespace pcu::net
