#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "mse/diffmath/parameters.hpp"

namespace mse::trainer {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Moment buffers mirror the ParameterSet they were created for.
struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;
  AdamWOptions options;

  static OptimizerState for_parameters(const diffmath::ParameterSet& params, AdamWOptions options = {}) {
    OptimizerState s;
    s.options = options;
    for (std::size_t i = 0; i < params.size(); ++i) {
      s.m.emplace_back(params.values(i).size(), 0.0);
      s.v.emplace_back(params.values(i).size(), 0.0);
    }
    return s;
  }
};

/// One AdamW update with bias correction and decoupled weight decay.
/// Throws NumericError naming the first parameter holding a non-finite gradient.
inline void adamw_step(diffmath::ParameterSet& params, const std::vector<std::vector<double>>& grads,
                       OptimizerState& state, double lr) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw DimensionError("optimizer state does not cover the parameter set");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params.values(i).size() || state.m[i].size() != grads[i].size()) {
      throw DimensionError("gradient shape mismatch for " + params.name(i));
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + params.name(i));
    }
  }
  const AdamWOptions& o = state.options;
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.mutable_values(i);
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      p[j] -= lr * o.weight_decay * p[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + o.eps);
    }
  }
}

/// Scales gradients in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) {
      for (double& x : g) x *= s;
    }
  }
  return norm;
}

/// Linear warmup from 0 to base_lr over warmup_fraction * total_steps, then
/// cosine decay to 0 at total_steps.
inline double lr_schedule(long step, long total_steps, double base_lr, double warmup_fraction) {
  if (total_steps <= 0) return 0.0;
  const double s = static_cast<double>(step);
  const double total = static_cast<double>(total_steps);
  const double warm = warmup_fraction * total;
  if (s < warm) return base_lr * s / warm;
  if (total <= warm) return base_lr;
  const double progress = std::min(1.0, (s - warm) / (total - warm));
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace mse::trainer
