// pcu: synthetic data, training, upsampling, evaluation and gradient checks.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pcu/pcu.hpp"

namespace fs = std::filesystem;

namespace {

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& seed, const char* command) {
  if (seed) return *seed;
  std::random_device rd;
  const std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::cerr << command << ": no --seed given, using seed " << s << '\n';
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  pcu::io::write_atomically(path, [&](std::ostream& out) { out << text; });
}

bool mentions_key(const fs::path& config, const std::string& key) {
  std::ifstream in(config);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string k = line.substr(0, eq);
    k.erase(std::remove_if(k.begin(), k.end(), [](unsigned char c) { return std::isspace(c); }), k.end());
    if (k == key) return true;
  }
  return false;
}

// Every .xyzn/.xyz/.ply file in `dir`, sorted by name. Clouds of exactly the
// patch size are used whole; larger ones are cut into overlapping patches.
std::vector<pcu::PointCloud> load_dataset(const fs::path& dir, pcu::Index patch_points) {
  if (!fs::is_directory(dir)) throw pcu::IoError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".xyzn" || ext == ".xyz" || ext == ".ply")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw pcu::IoError(dir.string() + ": no .xyzn or .ply files");

  std::vector<pcu::PointCloud> patches;
  for (const auto& f : files) {
    const pcu::PointCloud cloud = pcu::io::read_cloud(f);
    if (cloud.size() < patch_points) {
      throw pcu::ParameterError(f.string() + ": " + std::to_string(cloud.size()) + " points, need at least " +
                                std::to_string(patch_points));
    }
    if (cloud.size() == patch_points) {
      patches.push_back(cloud);
      continue;
    }
    const pcu::PatchSet set =
        pcu::extract_patches(cloud, patch_points, pcu::default_patch_count(cloud.size(), patch_points));
    for (const auto& p : set.patches) patches.push_back(pcu::select(cloud, p.members));
  }
  return patches;
}

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point cloud upsampling with normals"};
  app.require_subcommand(1);

  // synth
  Common synth;
  std::string shape;
  pcu::Index synth_n = 0;
  auto* synth_cmd = app.add_subcommand("synth", "Sample an analytic surface with exact normals");
  synth_cmd->add_option("shape", shape, "sphere, plane, torus or cube")->required();
  synth_cmd->add_option("n", synth_n, "number of points")->required()->check(CLI::Range(8, 100000000));
  synth_cmd->add_option("--seed", synth.seed, "random seed");
  synth_cmd->add_option("--out", synth.out, "output XYZN file")->required();

  // downsample
  Common down;
  std::string down_in;
  pcu::Index down_m = 0;
  auto* down_cmd = app.add_subcommand("downsample", "Non-uniform downsampling");
  down_cmd->add_option("input", down_in, "input cloud")->required()->check(CLI::ExistingFile);
  down_cmd->add_option("-m,--m", down_m, "points to keep")->required()->check(CLI::PositiveNumber);
  down_cmd->add_option("--seed", down.seed, "random seed");
  down_cmd->add_option("--out", down.out, "output XYZN file")->required();

  // init
  Common init;
  pcu::Index init_up = 4, init_patch = 128, init_k = pcu::loss::kDefaultK;
  auto* init_cmd = app.add_subcommand("init", "Write a randomly initialized checkpoint");
  init_cmd->add_option("--seed", init.seed, "random seed");
  init_cmd->add_option("--up-ratio", init_up, "upsampling factor (power of two)");
  init_cmd->add_option("--patch-size", init_patch, "points per input patch");
  init_cmd->add_option("--k", init_k, "loss neighborhood size");
  init_cmd->add_option("--out", init.out, "output checkpoint")->required();

  // train
  Common train;
  std::string config_path, data_dir, history_path, resume_path;
  std::optional<pcu::Index> train_k, train_up, train_patch;
  auto* train_cmd = app.add_subcommand("train", "Train on a directory of ground-truth patches");
  train_cmd->add_option("--config", config_path, "key=value training config")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", data_dir, "directory of .xyzn/.ply ground-truth clouds")->required();
  train_cmd->add_option("--seed", train.seed, "random seed (overrides rng_seed)");
  train_cmd->add_option("--k", train_k, "loss neighborhood size (overrides k)");
  train_cmd->add_option("--up-ratio", train_up, "upsampling factor (overrides up_ratio)");
  train_cmd->add_option("--patch-size", train_patch, "network input points (overrides input_size)");
  train_cmd->add_option("--history", history_path, "per-epoch loss CSV");
  train_cmd->add_option("--resume", resume_path, "continue from a training checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train.out, "output checkpoint")->required();

  // upsample
  Common up;
  std::string up_in, checkpoint_path;
  pcu::Index up_patch = 0;
  std::optional<pcu::Index> up_ratio;
  auto* up_cmd = app.add_subcommand("upsample", "Upsample a cloud with a trained checkpoint");
  up_cmd->add_option("input", up_in, "input cloud")->required()->check(CLI::ExistingFile);
  up_cmd->add_option("--checkpoint", checkpoint_path, "network checkpoint")->required()->check(CLI::ExistingFile);
  up_cmd->add_option("--patch-size", up_patch, "points per patch (default: the checkpoint's)");
  up_cmd->add_option("--up-ratio", up_ratio, "expected upsampling factor; must match the checkpoint");
  up_cmd->add_option("--out", up.out, "output XYZN file")->required();

  // eval
  Common ev;
  std::string pred_path, gt_path, deviation_path;
  auto* eval_cmd = app.add_subcommand("eval", "CD, HD and normal angle error against ground truth");
  eval_cmd->add_option("pred", pred_path, "predicted cloud")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("gt", gt_path, "ground-truth cloud")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", ev.out, "report file (default: standard output)");
  eval_cmd->add_option("--deviation", deviation_path, "per-point deviation export (XYZN + distance)");

  // gradcheck
  Common gc;
  pcu::Index gc_instances = 20;
  bool gc_no_network = false;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every loss and the network");
  gc_cmd->add_option("--seed", gc.seed, "random seed");
  gc_cmd->add_option("--instances", gc_instances, "random instances")->check(CLI::PositiveNumber);
  gc_cmd->add_flag("--no-network", gc_no_network, "skip the network cases");
  gc_cmd->add_option("--out", gc.out, "per-case report file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) {
      const std::uint64_t seed = resolve_seed(synth.seed, "synth");
      pcu::io::write_xyzn(synth.out, pcu::shapes::by_name(shape, synth_n, seed));
    } else if (*down_cmd) {
      const std::uint64_t seed = resolve_seed(down.seed, "downsample");
      const pcu::PointCloud cloud = pcu::io::read_cloud(down_in);
      pcu::io::write_xyzn(down.out, pcu::nonuniform_downsample(cloud, down_m, seed));
    } else if (*init_cmd) {
      const std::uint64_t seed = resolve_seed(init.seed, "init");
      pcu::Checkpoint c;
      c.config = pcu::net::NetConfig::desk_scale();
      c.config.up_ratio = init_up;
      c.config.patch_size = init_patch;
      c.config.k = init_k;
      c.params = pcu::net::init_params(c.config, seed);
      pcu::save_checkpoint(init.out, c);
    } else if (*train_cmd) {
      pcu::TrainConfig config = config_path.empty() ? pcu::TrainConfig{} : pcu::load_train_config(config_path);
      if (train.seed || config_path.empty() || !mentions_key(config_path, "rng_seed")) {
        config.rng_seed = resolve_seed(train.seed, "train");
      }
      if (train_k) config.k = *train_k;
      if (train_up) config.up_ratio = *train_up;
      if (train_patch) config.input_size = *train_patch;
      pcu::validate(config);
      const auto dataset = load_dataset(data_dir, config.input_size * config.up_ratio);
      std::cerr << "train: " << dataset.size() << " patches, " << config.epochs << " epochs\n";

      std::optional<pcu::TrainState> start;
      if (!resume_path.empty()) start = pcu::Trainer::state_from(pcu::load_checkpoint(resume_path));
      std::ostringstream history;
      history << pcu::history_csv_header() << '\n';
      pcu::TrainOptions options;
      options.checkpoint_path = train.out;
      options.on_epoch = [&](const pcu::EpochRecord& r) {
        history << pcu::history_csv_row(r) << '\n';
        std::cerr << "epoch " << r.epoch << " total " << r.mean.total << '\n';
      };
      pcu::train(dataset, config, options, std::move(start));
      if (!history_path.empty()) write_text(history_path, history.str());
    } else if (*up_cmd) {
      const pcu::Checkpoint c = pcu::load_checkpoint(checkpoint_path);
      if (up_ratio && *up_ratio != c.config.up_ratio) {
        throw pcu::ParameterError("--up-ratio " + std::to_string(*up_ratio) + " does not match the checkpoint's " +
                                  std::to_string(c.config.up_ratio));
      }
      const pcu::net::Network network(c.config, c.params);
      pcu::UpsampleOptions options;
      options.patch_size = up_patch;
      options.warn = [](const std::string& w) { std::cerr << "upsample: warning: " << w << '\n'; };
      const pcu::UpsampleResult r = pcu::upsample_cloud(pcu::io::read_cloud(up_in), network, options);
      if (r.degenerate_normals > 0) {
        std::cerr << "upsample: " << r.degenerate_normals << " zero-length normals replaced by (0,0,1)\n";
      }
      pcu::io::write_xyzn(up.out, r.cloud);
    } else if (*eval_cmd) {
      const pcu::PointCloud pred = pcu::io::read_cloud(pred_path);
      const pcu::PointCloud gt = pcu::io::read_cloud(gt_path);
      const std::string report = pcu::metrics::to_key_values(pcu::metrics::evaluate(pred, gt));
      if (!deviation_path.empty()) pcu::metrics::deviation_export(pred, gt, deviation_path);
      if (ev.out.empty()) {
        std::cout << report;
      } else {
        write_text(ev.out, report);
      }
    } else if (*gc_cmd) {
      const std::uint64_t seed = resolve_seed(gc.seed, "gradcheck");
      pcu::GradientSuiteOptions options;
      options.instances = gc_instances;
      options.network = !gc_no_network;
      const auto start = std::chrono::steady_clock::now();
      const pcu::GradientSuiteResult r = pcu::run_gradient_suite(seed, options);
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::ostringstream report;
      std::size_t failed = 0;
      for (const auto& c : r.cases) {
        char line[256];
        std::snprintf(line, sizeof(line), "%s instance=%lld points=%lld max_deviation=%.3e checked=%lld %s\n",
                      c.name.c_str(), static_cast<long long>(c.instance), static_cast<long long>(c.points),
                      c.report.max_deviation, static_cast<long long>(c.report.checked), c.passed ? "ok" : "FAIL");
        report << line;
        if (!c.passed) {
          ++failed;
          std::cerr << line;
        }
      }
      if (!gc.out.empty()) write_text(gc.out, report.str());
      std::printf("gradcheck: %zu cases, %zu failed, worst deviation %.3e, %.1f s\n", r.cases.size(), failed,
                  r.worst(), seconds);
      return failed == 0 ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
