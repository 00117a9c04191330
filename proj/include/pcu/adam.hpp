#pragma once

#include <cmath>
#include <string>

#include "pcu/error.hpp"
#include "pcu/network.hpp"

namespace pcu {

struct AdamConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moments shaped like the parameters.
struct AdamState {
  net::NetworkParams m;
  net::NetworkParams v;
  long step = 0;
};

inline AdamState make_adam_state(const net::NetworkParams& params) {
  AdamState s;
  for (const auto& [path, l] : params) {
    s.m[path] = net::Layer{ad::Matrix::Zero(l.weight.rows(), l.weight.cols()), ad::Matrix::Zero(1, l.bias.cols())};
    s.v[path] = s.m[path];
  }
  return s;
}

namespace detail {

inline void adam_update(ad::Matrix& p, const ad::Matrix& g, ad::Matrix& m, ad::Matrix& v, const AdamConfig& c,
                        double bias1, double bias2) {
  if (c.weight_decay != 0.0) p *= 1.0 - c.learning_rate * c.weight_decay;
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
  p.array() -= c.learning_rate * (m.array() / bias1) / ((v.array() / bias2).sqrt() + c.epsilon);
}

}  // namespace detail

// One Adam step with bias correction and decoupled weight decay
// (p <- p * (1 - lr * wd) before the moment update). Gradients are checked
// for NaN/Inf before anything is modified.
inline void adam_step(net::NetworkParams& params, const net::NetworkParams& grads, AdamState& state,
                      const AdamConfig& config) {
  for (const auto& [path, l] : params) {
    auto g = grads.find(path);
    detail::require(g != grads.end(), "adam_step: no gradient for layer " + path);
    detail::require(g->second.weight.rows() == l.weight.rows() && g->second.weight.cols() == l.weight.cols() &&
                        g->second.bias.cols() == l.bias.cols(),
                    "adam_step: gradient shape mismatch for layer " + path);
    detail::require(state.m.count(path) && state.v.count(path), "adam_step: no moments for layer " + path);
    if (!g->second.weight.allFinite() || !g->second.bias.allFinite()) {
      throw NumericError("adam_step: non-finite gradient in layer " + path);
    }
  }
  ++state.step;
  const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (auto& [path, l] : params) {
    const net::Layer& g = grads.at(path);
    net::Layer& m = state.m.at(path);
    net::Layer& v = state.v.at(path);
    detail::adam_update(l.weight, g.weight, m.weight, v.weight, config, bias1, bias2);
    detail::adam_update(l.bias, g.bias, m.bias, v.bias, config, bias1, bias2);
  }
}

}  // namespace pcu
