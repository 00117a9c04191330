#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pcu/adam.hpp"
#include "pcu/checkpoint.hpp"
#include "pcu/error.hpp"
#include "pcu/losses.hpp"
#include "pcu/network.hpp"
#include "pcu/point_cloud.hpp"
#include "pcu/random.hpp"
#include "pcu/sampling.hpp"

namespace pcu {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  Index batch_size = 20;
  Index epochs = 500;
  Index k = loss::kDefaultK;
  loss::LossWeights weights;
  std::uint64_t rng_seed = 0;
  Index input_size = 128;  // points per network input; ground-truth patches hold input_size * up_ratio
  Index up_ratio = 4;
  bool augment = true;
  AugmentConfig augmentation;
  std::vector<net::ScaleSpec> scales = net::NetConfig::desk_scale().scales;
  Index checkpoint_interval = 0;  // epochs between checkpoints; 0 writes only the final one

  net::NetConfig net_config() const {
    net::NetConfig c;
    c.up_ratio = up_ratio;
    c.scales = scales;
    c.k = k;
    c.patch_size = input_size;
    return c;
  }

  AdamConfig adam() const {
    AdamConfig a;
    a.learning_rate = learning_rate;
    a.weight_decay = weight_decay;
    return a;
  }
};

inline void validate(const TrainConfig& c) {
  detail::require(c.learning_rate > 0.0, "train config: learning_rate must be positive");
  detail::require(c.weight_decay >= 0.0, "train config: weight_decay must be non-negative");
  detail::require(c.batch_size >= 1, "train config: batch_size must be positive");
  detail::require(c.epochs >= 0, "train config: epochs must be non-negative");
  detail::require(c.input_size >= 1, "train config: input_size must be positive");
  detail::require(c.up_ratio >= 1, "train config: up_ratio must be positive");
  detail::require(c.input_size % c.up_ratio == 0, "train config: input_size must be divisible by up_ratio");
  detail::require(c.checkpoint_interval >= 0, "train config: checkpoint_interval must be non-negative");
  loss::validate(c.weights);
  validate(c.augmentation);
}

// Flat key=value text, `#` comments. Unknown keys are rejected.
inline TrainConfig parse_train_config(std::istream& in, const std::string& source = "<config>") {
  TrainConfig c;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> radii;
  std::vector<Index> samples;
  bool radii_set = false, samples_set = false;
  auto fail = [&](const std::string& why) {
    return ParameterError(source + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail("expected key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto number = [&]() {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(value, &used);
      } catch (const std::exception&) {
        throw fail("'" + key + "' needs a number");
      }
      if (used != value.size()) throw fail("'" + key + "' needs a number");
      return v;
    };
    auto integer = [&]() {
      const double v = number();
      if (v != std::floor(v)) throw fail("'" + key + "' needs an integer");
      return static_cast<Index>(v);
    };
    auto flag = [&]() {
      if (value == "1" || value == "true") return true;
      if (value == "0" || value == "false") return false;
      throw fail("'" + key + "' needs true/false");
    };
    auto list = [&]() {
      std::vector<double> out;
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        item = trim(item);
        try {
          out.push_back(std::stod(item, &used));
        } catch (const std::exception&) {
          throw fail("'" + key + "' needs a comma-separated number list");
        }
        if (used != item.size()) throw fail("'" + key + "' needs a comma-separated number list");
      }
      return out;
    };

    if (key == "learning_rate") c.learning_rate = number();
    else if (key == "weight_decay") c.weight_decay = number();
    else if (key == "batch_size") c.batch_size = integer();
    else if (key == "epochs") c.epochs = integer();
    else if (key == "k") c.k = integer();
    else if (key == "w1") c.weights.w1 = number();
    else if (key == "w2") c.weights.w2 = number();
    else if (key == "w3") c.weights.w3 = number();
    else if (key == "w4") c.weights.w4 = number();
    else if (key == "w5") c.weights.w5 = number();
    else if (key == "rng_seed") c.rng_seed = static_cast<std::uint64_t>(integer());
    else if (key == "input_size") c.input_size = integer();
    else if (key == "up_ratio") c.up_ratio = integer();
    else if (key == "augment") c.augment = flag();
    else if (key == "rotate") c.augmentation.rotate = flag();
    else if (key == "scale_min") c.augmentation.scale_min = number();
    else if (key == "scale_max") c.augmentation.scale_max = number();
    else if (key == "shift") c.augmentation.shift = number();
    else if (key == "noise_sigma") c.augmentation.noise_sigma = number();
    else if (key == "checkpoint_interval") c.checkpoint_interval = integer();
    else if (key == "scale_radii") {
      radii = list();
      radii_set = true;
    } else if (key == "scale_samples") {
      for (double v : list()) samples.push_back(static_cast<Index>(v));
      samples_set = true;
    } else {
      throw fail("unknown key '" + key + "'");
    }
  }
  if (radii_set || samples_set) {
    if (!radii_set || !samples_set || radii.size() != samples.size()) {
      throw ParameterError(source + ": scale_radii and scale_samples must both be given with equal length");
    }
    c.scales.clear();
    for (std::size_t i = 0; i < radii.size(); ++i) c.scales.push_back({radii[i], samples[i]});
  }
  validate(c);
  return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_train_config(in, path.string());
}

struct TrainingPair {
  PointCloud input;
  PointCloud target;
};

// Augments the ground-truth patch (shared rotation/scale/shift), downsamples it
// non-uniformly to input_size, adds position noise to the input only, and
// normalizes both by the target's centroid and radius.
inline TrainingPair make_training_pair(const PointCloud& gt_patch, const TrainConfig& config, std::uint64_t rng_seed) {
  detail::require(gt_patch.size() == config.input_size * config.up_ratio,
                  "make_training_pair: patch has " + std::to_string(gt_patch.size()) + " points, expected " +
                      std::to_string(config.input_size * config.up_ratio));
  Rng rng(rng_seed);
  PointCloud target = config.augment ? draw_similarity(rng, config.augmentation).apply(gt_patch) : gt_patch;
  const std::uint64_t downsample_seed = rng();
  PointCloud input = nonuniform_downsample(target, config.input_size, downsample_seed);

  const Normalization t = compute_normalization(target.positions);
  TrainingPair pair;
  pair.target = PointCloud(apply(t, target.positions), target.normals);
  pair.input = PointCloud(apply(t, input.positions), input.normals);
  if (config.augment) add_position_noise(pair.input, rng, config.augmentation.noise_sigma);
  return pair;
}

struct TrainState {
  net::NetworkParams params;
  AdamState adam;
  Index epoch = 0;
};

struct EpochRecord {
  Index epoch = 0;  // 1-based
  loss::LossReport mean;
};

struct BatchResult {
  loss::LossReport mean;
  net::NetworkParams grads;  // mean of per-sample gradients
};

// Forward/backward of one pair on its own tape.
inline BatchResult sample_gradient(const net::NetworkParams& params, const net::NetConfig& net_config,
                                   const TrainingPair& pair, const loss::LossWeights& weights, Index k) {
  ad::Tape tape;
  const net::BoundParams bound = net::bind(tape, params, net_config, true);
  const ad::Tensor out = net::forward(tape.constant(net::to_input(pair.input)), bound, net_config);
  const loss::TotalLoss l = loss::total_loss(out, pair.target, weights, k);
  tape.backward(l.total);
  return {l.report, net::collect_gradients(bound)};
}

inline void accumulate(loss::LossReport& into, const loss::LossReport& r, double s) {
  into.total += s * r.total;
  into.cd += s * r.cd;
  into.point_knn += s * r.point_knn;
  into.normal += s * r.normal;
  into.normal_orth += s * r.normal_orth;
  into.normal_knn += s * r.normal_knn;
}

// Mean loss and mean gradient over a batch, reduced in sample order.
inline BatchResult batch_gradient(const net::NetworkParams& params, const net::NetConfig& net_config,
                                  const std::vector<const TrainingPair*>& batch, const loss::LossWeights& weights,
                                  Index k) {
  detail::require(!batch.empty(), "batch_gradient: empty batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  BatchResult out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    BatchResult one = sample_gradient(params, net_config, *batch[i], weights, k);
    if (!std::isfinite(one.mean.total)) {
      throw NumericError("non-finite loss (total=" + std::to_string(one.mean.total) + ")");
    }
    accumulate(out.mean, one.mean, inv);
    if (i == 0) {
      out.grads = std::move(one.grads);
      for (auto& [path, g] : out.grads) {
        g.weight *= inv;
        g.bias *= inv;
      }
    } else {
      for (auto& [path, g] : out.grads) {
        g.weight += inv * one.grads.at(path).weight;
        g.bias += inv * one.grads.at(path).bias;
      }
    }
  }
  return out;
}

class Trainer {
 public:
  Trainer(std::vector<PointCloud> dataset, TrainConfig config, TrainState state)
      : dataset_(std::move(dataset)), config_(std::move(config)), net_config_(config_.net_config()),
        state_(std::move(state)) {
    validate(config_);
    net::validate(state_.params, net_config_);
    for (std::size_t i = 0; i < dataset_.size(); ++i) {
      detail::require(dataset_[i].size() == config_.input_size * config_.up_ratio,
                      "train: patch " + std::to_string(i) + " has " + std::to_string(dataset_[i].size()) +
                          " points, expected " + std::to_string(config_.input_size * config_.up_ratio));
    }
    if (!config_.augment) {
      // Without augmentation every pair is fixed; build them once.
      for (std::size_t i = 0; i < dataset_.size(); ++i) fixed_pairs_.push_back(pair_for(i));
    }
  }

  static TrainState initial_state(const TrainConfig& config) {
    TrainState s;
    s.params = net::init_params(config.net_config(), mix_seed(config.rng_seed, 0x1417));
    s.adam = make_adam_state(s.params);
    return s;
  }

  // One pass over the shuffled dataset; one Adam step per batch.
  EpochRecord run_epoch() {
    const Index epoch = state_.epoch;
    std::vector<std::size_t> order(dataset_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(config_.rng_seed, 0x5f5f0000ULL + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord record;
    record.epoch = epoch + 1;
    std::vector<TrainingPair> fresh;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config_.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config_.batch_size));
      std::vector<const TrainingPair*> batch;
      fresh.clear();
      fresh.reserve(end - start);
      for (std::size_t b = start; b < end; ++b) {
        if (config_.augment) {
          fresh.push_back(pair_for(order[b]));
          batch.push_back(&fresh.back());
        } else {
          batch.push_back(&fixed_pairs_[order[b]]);
        }
      }
      const BatchResult r = batch_gradient(state_.params, net_config_, batch, config_.weights, config_.k);
      adam_step(state_.params, r.grads, state_.adam, config_.adam());
      accumulate(record.mean, r.mean, static_cast<double>(batch.size()) / static_cast<double>(order.size()));
    }
    ++state_.epoch;
    return record;
  }

  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return config_; }
  const net::NetConfig& net_config() const { return net_config_; }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.config = net_config_;
    c.params = state_.params;
    c.adam = state_.adam;
    c.epoch = state_.epoch;
    return c;
  }

  static TrainState state_from(const Checkpoint& c) {
    detail::require(c.adam.has_value(), "checkpoint carries no optimizer state");
    return TrainState{c.params, *c.adam, c.epoch};
  }

 private:
  TrainingPair pair_for(std::size_t sample) const {
    const std::uint64_t salt = config_.augment
                                   ? static_cast<std::uint64_t>(state_.epoch) * 0x100000000ULL + sample
                                   : sample;
    return make_training_pair(dataset_[sample], config_, mix_seed(config_.rng_seed, salt));
  }

  std::vector<PointCloud> dataset_;
  TrainConfig config_;
  net::NetConfig net_config_;
  TrainState state_;
  std::vector<TrainingPair> fixed_pairs_;
};

struct TrainOptions {
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  net::NetworkParams params;
  std::vector<EpochRecord> history;
  TrainState state;
};

// Runs config.epochs epochs from `start` (fresh initialization when absent).
// A non-finite loss raises NumericError; checkpoints already on disk are
// left untouched, so the last good one survives.
inline TrainResult train(const std::vector<PointCloud>& dataset, const TrainConfig& config,
                         const TrainOptions& options = {}, std::optional<TrainState> start = std::nullopt) {
  Trainer trainer(dataset, config, start ? std::move(*start) : Trainer::initial_state(config));
  TrainResult result;
  if (!dataset.empty()) {
    while (trainer.state().epoch < config.epochs) {
      const EpochRecord record = trainer.run_epoch();
      result.history.push_back(record);
      if (options.on_epoch) options.on_epoch(record);
      if (!options.checkpoint_path.empty() && config.checkpoint_interval > 0 &&
          trainer.state().epoch % config.checkpoint_interval == 0) {
        save_checkpoint(options.checkpoint_path, trainer.checkpoint());
      }
    }
  }
  if (!options.checkpoint_path.empty()) save_checkpoint(options.checkpoint_path, trainer.checkpoint());
  result.state = trainer.state();
  result.params = result.state.params;
  return result;
}

inline std::string history_csv_header() { return "epoch,total,cd,point_knn,normal,normal_orth,normal_knn"; }

inline std::string history_csv_row(const EpochRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", static_cast<long long>(r.epoch),
                r.mean.total, r.mean.cd, r.mean.point_knn, r.mean.normal, r.mean.normal_orth, r.mean.normal_knn);
  return buf;
}

inline void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << history_csv_header() << '\n';
  for (const auto& r : history) out << history_csv_row(r) << '\n';
}

}  // namespace pcu
