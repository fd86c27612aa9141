#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mse/diffmath/parameters.hpp"

namespace mse::diffmath {

struct GradCheckEntry {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t floored = 0;  // entries with max(|a|, |n|) below the floor
};

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor for the relative error, so entries whose true gradient
  // is ~0 are judged on absolute error instead.
  double rel_floor = 1e-6;
};

// |a - n| / max(floor, |a|, |n|)
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({floor, std::abs(analytic), std::abs(numeric)});
}

/// Compares tape gradients of `loss` against central finite differences for
/// every value of every parameter. `loss` maps bound parameters to a scalar.
template <class LossFn>
std::vector<GradCheckEntry> gradient_check(const ParameterSet& params, LossFn&& loss,
                                           GradCheckOptions options = {}) {
  Tape tape;
  BoundParameters bound = params.bind(tape);
  Tensor root = loss(bound);
  tape.backward(root);
  const auto analytic = bound.gradients();

  ParameterSet probe = params;
  std::vector<GradCheckEntry> out;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    GradCheckEntry entry{probe.name(i), probe.values(i).size(), 0.0, 0.0, 0};
    auto& values = probe.mutable_values(i);
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + options.step;
      const double up = loss(probe.constants()).item();
      values[j] = saved - options.step;
      const double down = loss(probe.constants()).item();
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[i][j];
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(a - numeric));
      if (std::max(std::abs(a), std::abs(numeric)) < options.rel_floor) ++entry.floored;
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(a, numeric, options.rel_floor));
    }
    out.push_back(entry);
  }
  return out;
}

}  // namespace mse::diffmath
