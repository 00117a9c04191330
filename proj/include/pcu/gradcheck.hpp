#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "pcu/autodiff.hpp"

namespace pcu::ad {

// Scalar function of one input tensor, recorded on the given tape.
using ScalarFunction = std::function<Tensor(Tape&, const Tensor&)>;

struct FdOptions {
  double step = 1e-4;
  double floor = 1e-6;  // absolute floor of the relative-error denominator
  // Flat (row-major) element indices to check; empty checks every element.
  std::vector<Index> elements;
  // Elements for which this returns true are skipped (e.g. a relu exactly at 0).
  std::function<bool(Index)> exclude;
  // When the central difference disagrees with the analytic value, the step
  // is halved while consecutive estimates disagree with each other; that
  // pattern means the stencil straddles a kink (relu, max, neighbor switch).
  int max_halvings = 3;
  // Piecewise functions (relu, max, neighbor selections) are differenced
  // only inside one piece: the step is shrunk up to max_piece_halvings times
  // until both stencil points record the same tape decisions as the centre.
  // An element whose stencil still straddles a switch is a tie and skipped.
  bool within_piece = true;
  int max_piece_halvings = 6;
};

struct FdReport {
  double max_deviation = 0.0;
  Index worst_element = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  Index checked = 0;
  Index excluded = 0;
  Index refined = 0;  // elements whose step was shrunk away from a kink
  Index ties = 0;     // elements skipped because every step straddled a selection switch
};

inline double evaluate(const ScalarFunction& f, const Matrix& point, std::uint64_t* decisions = nullptr) {
  Tape tape;
  const Tensor x = tape.constant(point);
  const double v = f(tape, x).item();
  if (decisions) *decisions = tape.decisions();
  return v;
}

// Max over elements of |analytic - central| / max(|analytic|, |central|, floor).
inline FdReport finite_difference_check(const ScalarFunction& f, const Matrix& point, const FdOptions& options = {}) {
  Matrix analytic;
  std::uint64_t centre_piece = 0;
  {
    Tape tape;
    const Tensor x = tape.leaf(point);
    const Tensor y = f(tape, x);
    centre_piece = tape.decisions();
    tape.backward(y);
    analytic = x.grad();
  }

  bool same_piece = true;
  auto central = [&](Index e, double h) {
    Matrix p = point;
    double* v = p.data() + e;
    const double orig = *v;
    std::uint64_t up_piece = 0, down_piece = 0;
    *v = orig + h;
    const double up = evaluate(f, p, &up_piece);
    *v = orig - h;
    const double down = evaluate(f, p, &down_piece);
    same_piece = !options.within_piece || (up_piece == centre_piece && down_piece == centre_piece);
    return (up - down) / (2.0 * h);
  };
  auto deviation = [&](double a, double c) {
    return std::abs(a - c) / std::max({std::abs(a), std::abs(c), options.floor});
  };

  std::vector<Index> elements = options.elements;
  if (elements.empty()) {
    elements.resize(static_cast<std::size_t>(point.size()));
    for (Index e = 0; e < point.size(); ++e) elements[static_cast<std::size_t>(e)] = e;
  }

  FdReport report;
  for (Index e : elements) {
    if (options.exclude && options.exclude(e)) {
      ++report.excluded;
      continue;
    }
    const double a = analytic.data()[e];
    double h = options.step;
    double numeric = central(e, h);
    for (int i = 0; i < options.max_piece_halvings && !same_piece; ++i) {
      h /= 2.0;
      numeric = central(e, h);
    }
    if (!same_piece) {
      ++report.ties;
      continue;
    }
    double dev = deviation(a, numeric);
    if (dev > 1e-6) {
      bool refined = false;
      for (int i = 0; i < options.max_halvings; ++i) {
        const double finer = central(e, h / 2.0);
        const bool kinked = deviation(numeric, finer) > 1e-6;
        h /= 2.0;
        if (!kinked) break;
        numeric = finer;
        dev = deviation(a, numeric);
        refined = true;
      }
      report.refined += refined;
    }
    ++report.checked;
    if (dev > report.max_deviation || report.worst_element < 0) {
      report.max_deviation = std::max(report.max_deviation, dev);
      report.worst_element = e;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace pcu::ad
