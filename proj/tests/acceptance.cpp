// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "pcu/pcu.hpp"

namespace fs = std::filesystem;
using pcu::Index;
using pcu::PointCloud;
using testing_util::random_cloud;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void report(const char* name, bool pass, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

// ---------------------------------------------------------------------------

void gradient_correctness() {
  const auto start = Clock::now();
  const pcu::GradientSuiteResult r = pcu::run_gradient_suite(2024);
  const double t = seconds_since(start);
  std::size_t failed = 0, ties = 0;
  for (const auto& c : r.cases) {
    failed += c.passed ? 0 : 1;
    ties += static_cast<std::size_t>(c.report.ties);
  }
  report("gradient_correctness", failed == 0 && t < 120.0,
         fmt("%zu cases over 20 instances of 8-32 points, %zu failed, worst relative deviation %.2e "
             "(tolerance 1e-4), %zu elements skipped at selection switches, %.1f s (limit 120 s)",
             r.cases.size(), failed, r.worst(), ties, t));
}

void oracle_equivalence() {
  double worst = 0.0;
  std::string worst_name = "none";
  auto track = [&](const char* name, double got, double expect) {
    const double d = std::abs(got - expect);
    if (d > worst || !std::isfinite(d)) {
      worst = std::isfinite(d) ? d : 1e300;
      worst_name = name;
    }
  };
  Index instances = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    pcu::Rng rng(pcu::mix_seed(seed, 0xacce));
    const Index n = 2 + static_cast<Index>(rng() % 255);
    const Index m = 1 + static_cast<Index>(rng() % 256);
    const Index k = std::min<Index>(15, n - 1);
    const PointCloud a = random_cloud(n, pcu::mix_seed(seed, 1));
    const PointCloud b = random_cloud(m, pcu::mix_seed(seed, 2), 1.5);
    track("chamfer", pcu::loss::chamfer(a, b), oracle::chamfer(a.positions, b.positions));
    track("point_knn", pcu::loss::point_knn(a, k), oracle::point_knn(a.positions, static_cast<std::size_t>(k)));
    track("normal_orth", pcu::loss::normal_orth(a, k), oracle::normal_orth(a, static_cast<std::size_t>(k)));
    track("normal_knn", pcu::loss::normal_knn(a, k), oracle::normal_knn(a, static_cast<std::size_t>(k)));
    track("cd_metric", pcu::metrics::cd_metric(a, b), oracle::cd_metric(a.positions, b.positions));
    track("hd_metric", pcu::metrics::hd_metric(a, b), oracle::hd_metric(a.positions, b.positions));
    ++instances;
  }
  Index emd_instances = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const Index n = 1 + static_cast<Index>(seed % 6);
    const PointCloud a = random_cloud(n, pcu::mix_seed(seed, 3)), b = random_cloud(n, pcu::mix_seed(seed, 4), 2.0);
    track("emd", pcu::loss::emd(a, b), oracle::emd_permutations(a.positions, b.positions));
    ++emd_instances;
  }
  report("oracle_equivalence", worst <= 1e-12,
         fmt("%lld random clouds (n <= 256) for chamfer/point_knn/normal_orth/normal_knn/cd/hd and %lld emd "
             "instances (n <= 6) vs brute force; worst absolute difference %.2e (%s), tolerance 1e-12",
             static_cast<long long>(instances), static_cast<long long>(emd_instances), worst, worst_name.c_str()));
}

// One desk-scale network overfit on a single 512-point sphere.
struct OverfitRun {
  std::vector<double> history;  // total loss per step, at the pre-update parameters
  double final_loss = 0.0;
  double final_point_knn = 0.0;
  double normal_angle_deg = 0.0;
  double seconds = 0.0;
  pcu::net::NetworkParams params;
  pcu::TrainConfig config;
};

OverfitRun overfit(double w2, Index steps) {
  const PointCloud sphere = pcu::shapes::sphere(512, 7);
  pcu::TrainConfig c;
  c.input_size = 128;
  c.up_ratio = 4;
  c.augment = false;
  c.batch_size = 1;
  c.epochs = steps;  // one sample, so one Adam step per epoch
  c.rng_seed = 11;
  c.weights.w2 = w2;

  OverfitRun run;
  run.config = c;
  const auto start = Clock::now();
  pcu::TrainOptions o;
  o.on_epoch = [&](const pcu::EpochRecord& r) { run.history.push_back(r.mean.total); };
  const pcu::TrainResult r = pcu::train({sphere}, c, o);
  run.params = r.params;

  const pcu::TrainingPair pair = pcu::make_training_pair(sphere, c, pcu::mix_seed(c.rng_seed, 0));
  const auto final = pcu::sample_gradient(r.params, c.net_config(), pair, c.weights, c.k);
  run.final_loss = final.mean.total;

  const pcu::net::Network network(c.net_config(), r.params);
  const pcu::net::Prediction pred = pcu::net::predict_normalized(network.predict(pcu::net::to_input(pair.input)));
  run.final_point_knn = pcu::loss::point_knn(pred.cloud, c.k);

  // Analytic normal of the unit sphere at each predicted point, in the
  // original frame.
  const pcu::Normalization frame = pcu::compute_normalization(sphere.positions);
  const pcu::Points world = pcu::invert(frame, pred.cloud.positions);
  double sum = 0.0;
  for (Index i = 0; i < world.rows(); ++i) {
    const pcu::Vec3 analytic = world.row(i).transpose().normalized();
    const pcu::Vec3 n = pred.cloud.normals.row(i).transpose();
    sum += 2.0 * std::atan2((n - analytic).norm(), (n + analytic).norm());
  }
  run.normal_angle_deg = sum / static_cast<double>(world.rows()) * 180.0 / std::numbers::pi;
  run.seconds = seconds_since(start);
  return run;
}

double window_mean(const std::vector<double>& v, std::size_t from, std::size_t count) {
  double s = 0.0;
  for (std::size_t i = from; i < from + count; ++i) s += v[i];
  return s / static_cast<double>(count);
}

constexpr Index kOverfitSteps = 1000;

void overfit_convergence(const OverfitRun& run) {
  const double first = run.history.front();
  const double drop = 1.0 - run.final_loss / first;
  const double at300 = run.history.size() > 300 ? run.history[300] : run.history.back();
  const std::size_t h = run.history.size();
  const bool trend = window_mean(run.history, h - 10, 10) < window_mean(run.history, 0, 10);
  const bool pass = drop >= 0.90 && run.normal_angle_deg <= 20.0 && run.seconds < 600.0 && trend;
  report("overfit_convergence", pass,
         fmt("%lld Adam steps on one 512-point sphere (input 128, up_ratio 4): total loss %.4g -> %.4g "
             "(drop %.1f%%, need >= 90%%; after 300 steps %.4g, drop %.1f%%), mean normal error %.2f deg vs "
             "analytic sphere normals (limit 20), %.0f s (limit 600)",
             static_cast<long long>(h), first, run.final_loss, 100.0 * drop, at300, 100.0 * (1.0 - at300 / first),
             run.normal_angle_deg, run.seconds));
}

void pipeline_contracts(const OverfitRun& trained) {
  const fs::path dir = fs::temp_directory_path() / "pcu_acceptance";
  fs::create_directories(dir);
  const fs::path ckpt = dir / "net.ckpt";
  pcu::Checkpoint c;
  c.config = trained.config.net_config();
  c.params = trained.params;
  pcu::save_checkpoint(ckpt, c);
  pcu::Checkpoint random_net;
  random_net.config = c.config;
  random_net.params = pcu::net::init_params(c.config, 5);
  const fs::path random_ckpt = dir / "random.ckpt";
  pcu::save_checkpoint(random_ckpt, random_net);

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  };
  // Reload everything from disk on every run so no state is shared.
  auto run_once = [&](const fs::path& input, const fs::path& net, const fs::path& out) {
    const pcu::Checkpoint loaded = pcu::load_checkpoint(net);
    const pcu::net::Network network(loaded.config, loaded.params);
    pcu::io::write_xyzn(out, pcu::upsample_cloud(pcu::io::read_cloud(input), network).cloud);
  };

  struct Case {
    const char* shape;
    Index n;
  };
  const Case cases[] = {{"sphere", 128}, {"sphere", 500}, {"torus", 1000}, {"cube", 333}, {"plane", 257}};
  bool ok = true;
  double worst_norm = 0.0;
  Index checked = 0;
  std::string problem;
  for (const fs::path& net : {ckpt, random_ckpt}) {
    for (const Case& k : cases) {
      const fs::path in = dir / "in.xyzn", a = dir / "a.xyzn", b = dir / "b.xyzn";
      pcu::io::write_xyzn(in, pcu::shapes::by_name(k.shape, k.n, static_cast<std::uint64_t>(k.n)));
      run_once(in, net, a);
      run_once(in, net, b);
      std::ifstream written(a);
      const PointCloud out = pcu::io::parse_xyzn(written).cloud;
      if (out.size() != 4 * k.n) {
        ok = false;
        problem += fmt(" %s n=%lld gave %lld points;", k.shape, static_cast<long long>(k.n),
                       static_cast<long long>(out.size()));
      }
      for (Index i = 0; i < out.size(); ++i) worst_norm = std::max(worst_norm, std::abs(out.normals.row(i).norm() - 1.0));
      if (slurp(a) != slurp(b)) {
        ok = false;
        problem += fmt(" %s n=%lld files differ;", k.shape, static_cast<long long>(k.n));
      }
      ++checked;
    }
  }
  fs::remove_all(dir);
  ok = ok && worst_norm <= 1e-3;
  report("pipeline_contracts", ok,
         fmt("%lld upsample runs (n = 128..1000, trained and random networks): output size 4n, worst | |n| - 1 | "
             "%.2e (limit 1e-3), repeated runs byte-identical%s",
             static_cast<long long>(checked), worst_norm, problem.empty() ? "" : (";" + problem).c_str()));
}

void uniformity(const OverfitRun& default_w2) {
  const OverfitRun with = overfit(10.0, kOverfitSteps);
  const OverfitRun without = overfit(0.0, kOverfitSteps);
  report("uniformity", with.final_point_knn < without.final_point_knn,
         fmt("point_knn (k=15) of the overfit prediction after %lld steps, same seed: w2=10 -> %.4f, w2=0 -> %.4f "
             "(default w2=0.1 -> %.4f)",
             static_cast<long long>(kOverfitSteps), with.final_point_knn, without.final_point_knn,
             default_w2.final_point_knn));
}

void scale_laws() {
  double worst4 = 0.0, worst2 = 0.0, worst_orth = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Index n = 8 + static_cast<Index>(seed * 13 % 120);
    const PointCloud a = random_cloud(n, pcu::mix_seed(seed, 5)), b = random_cloud(n, pcu::mix_seed(seed, 6));
    PointCloud a2 = a, b2 = b;
    a2.positions *= 2.0;
    b2.positions *= 2.0;
    const Index k = std::min<Index>(15, n - 1);
    worst4 = std::max(worst4, std::abs(pcu::loss::chamfer(a2, b2) - 4.0 * pcu::loss::chamfer(a, b)));
    worst4 = std::max(worst4, std::abs(pcu::loss::point_knn(a2, k) - 4.0 * pcu::loss::point_knn(a, k)));
    if (n <= 64) worst2 = std::max(worst2, std::abs(pcu::loss::emd(a2, b2) - 2.0 * pcu::loss::emd(a, b)));
    worst_orth = std::max(worst_orth, std::abs(pcu::loss::normal_orth(a2, k) - pcu::loss::normal_orth(a, k)));
  }
  report("scale_laws", worst4 <= 1e-9 && worst2 <= 1e-9 && worst_orth <= 1e-12,
         fmt("s=2 over 20 instances: chamfer/point_knn vs 4x worst diff %.2e, emd vs 2x %.2e (limit 1e-9), "
             "normal_orth change %.2e (limit 1e-12)",
             worst4, worst2, worst_orth));
}

void metric_axioms() {
  Index violations = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const PointCloud a = random_cloud(1 + static_cast<Index>(seed % 97), pcu::mix_seed(seed, 7));
    const PointCloud b = random_cloud(1 + static_cast<Index>(seed * 31 % 113), pcu::mix_seed(seed, 8), 1.3);
    using pcu::metrics::cd_metric;
    using pcu::metrics::hd_metric;
    const double cab = cd_metric(a, b), cba = cd_metric(b, a), hab = hd_metric(a, b), hba = hd_metric(b, a);
    if (cab != cba || hab != hba) ++violations;
    if (!(cab >= 0.0) || !(hab >= 0.0)) ++violations;
    if (cd_metric(a, a) != 0.0 || hd_metric(a, a) != 0.0 || cd_metric(b, b) != 0.0 || hd_metric(b, b) != 0.0) {
      ++violations;
    }
  }
  report("metric_axioms", violations == 0,
         fmt("cd_metric and hd_metric symmetric, non-negative and zero on identical clouds over 100 random "
             "instances: %lld violations",
             static_cast<long long>(violations)));
}

}  // namespace

int main() {
  const auto start = Clock::now();
  gradient_correctness();
  oracle_equivalence();
  const OverfitRun run = overfit(pcu::loss::LossWeights{}.w2, kOverfitSteps);
  overfit_convergence(run);
  pipeline_contracts(run);
  uniformity(run);
  scale_laws();
  metric_axioms();
  std::printf("acceptance: %d failed, %.0f s\n", failures, seconds_since(start));
  return failures == 0 ? 0 : 1;
}
