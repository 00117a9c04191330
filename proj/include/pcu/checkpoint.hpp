#pragma once

// Text checkpoint container. Layout:
//
//   pcu-checkpoint 1
//   up_ratio 4
//   k 15
//   patch_size 128
//   scales 4
//   scale 0.05 8            (one line per grouping scale)
//   epoch 12                (optional; training state only)
//   adam_step 12            (optional)
//   tensor param/global/mlp0/weight 6 32
//   <rows*cols values, row-major, %.17g, whitespace separated>
//   ...
//   end
//
// Doubles are printed with 17 significant digits so a save/load cycle is
// bit-exact. Loading validates the full layer dimension chain.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "pcu/adam.hpp"
#include "pcu/error.hpp"
#include "pcu/io.hpp"
#include "pcu/network.hpp"

namespace pcu {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  net::NetConfig config;
  net::NetworkParams params;
  std::optional<AdamState> adam;  // present for resumable training checkpoints
  Index epoch = 0;
};

namespace detail {

inline void write_tensor(std::ostream& out, const std::string& name, const ad::Matrix& m) {
  out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  char buf[32];
  for (Index i = 0; i < m.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", m.data()[i]);
    out << buf << ((i + 1) % 8 == 0 || i + 1 == m.size() ? '\n' : ' ');
  }
}

inline void write_params(std::ostream& out, const std::string& prefix, const net::NetworkParams& p) {
  for (const auto& [path, layer] : p) {
    write_tensor(out, prefix + path + "/weight", layer.weight);
    write_tensor(out, prefix + path + "/bias", layer.bias);
  }
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  net::validate(c.params, c.config);
  out << "pcu-checkpoint " << kCheckpointVersion << '\n';
  out << "up_ratio " << c.config.up_ratio << '\n';
  out << "k " << c.config.k << '\n';
  out << "patch_size " << c.config.patch_size << '\n';
  out << "scales " << c.config.scales.size() << '\n';
  char buf[64];
  for (const auto& s : c.config.scales) {
    std::snprintf(buf, sizeof(buf), "%.17g", s.radius);
    out << "scale " << buf << ' ' << s.max_samples << '\n';
  }
  if (c.adam) {
    out << "epoch " << c.epoch << '\n';
    out << "adam_step " << c.adam->step << '\n';
  }
  detail::write_params(out, "param/", c.params);
  if (c.adam) {
    detail::write_params(out, "adam_m/", c.adam->m);
    detail::write_params(out, "adam_v/", c.adam->v);
  }
  out << "end\n";
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  io::write_atomically(path, [&](std::ostream& out) { write_checkpoint(out, c); });
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& source = "<stream>") {
  auto fail = [&](const std::string& why) { return IoError(source + ": " + why); };
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "pcu-checkpoint") throw fail("not a checkpoint file");
  if (version != kCheckpointVersion) throw fail("unsupported checkpoint version " + std::to_string(version));

  Checkpoint c;
  c.config.scales.clear();
  std::map<std::string, ad::Matrix> tensors;
  bool has_adam = false;
  Index declared_scales = -1;
  bool ended = false;
  while (in >> word) {
    if (word == "end") {
      ended = true;
      break;
    } else if (word == "up_ratio") {
      in >> c.config.up_ratio;
    } else if (word == "k") {
      in >> c.config.k;
    } else if (word == "patch_size") {
      in >> c.config.patch_size;
    } else if (word == "scales") {
      in >> declared_scales;
    } else if (word == "scale") {
      net::ScaleSpec s;
      in >> s.radius >> s.max_samples;
      c.config.scales.push_back(s);
    } else if (word == "epoch") {
      in >> c.epoch;
    } else if (word == "adam_step") {
      has_adam = true;
      c.adam.emplace();
      in >> c.adam->step;
    } else if (word == "tensor") {
      std::string name;
      Index rows = 0, cols = 0;
      if (!(in >> name >> rows >> cols) || rows < 0 || cols < 0) throw fail("malformed tensor header");
      ad::Matrix m(rows, cols);
      for (Index i = 0; i < m.size(); ++i) {
        if (!(in >> m.data()[i])) throw fail("truncated tensor " + name);
      }
      tensors[name] = std::move(m);
    } else {
      throw fail("unknown record '" + word + "'");
    }
    if (!in) throw fail("malformed value after '" + word + "'");
  }
  if (!ended) throw fail("missing 'end' marker");
  if (declared_scales != static_cast<Index>(c.config.scales.size())) throw fail("scale count mismatch");

  const auto specs = net::layer_specs(c.config);
  auto take = [&](const std::string& prefix, net::NetworkParams& into) {
    for (const auto& s : specs) {
      auto w = tensors.find(prefix + s.path + "/weight");
      auto b = tensors.find(prefix + s.path + "/bias");
      if (w == tensors.end() || b == tensors.end()) throw fail("missing tensor " + prefix + s.path);
      into[s.path] = net::Layer{std::move(w->second), std::move(b->second)};
      tensors.erase(w);
      tensors.erase(b);
    }
    try {
      net::validate(into, c.config);
    } catch (const ParameterError& e) {
      throw fail(e.what());
    }
  };
  take("param/", c.params);
  if (has_adam) {
    take("adam_m/", c.adam->m);
    take("adam_v/", c.adam->v);
  }
  if (!tensors.empty()) throw fail("unexpected tensor " + tensors.begin()->first);
  return c;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_checkpoint(in, path.string());
}

}  // namespace pcu
