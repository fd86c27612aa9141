#pragma once

// Finite-difference checks of every differentiable primitive and of the
// adapter's parameters through a small frozen backbone.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mse/adapter/adapter.hpp"
#include "mse/diffmath/gradcheck.hpp"
#include "mse/diffmath/ops.hpp"
#include "mse/lm/backbone.hpp"
#include "mse/trainer/train.hpp"

namespace mse::app {

using diffmath::BoundParameters;
using diffmath::GradCheckEntry;
using diffmath::ParameterSet;
using diffmath::Tensor;

struct GradCheckRow {
  std::string group;  // primitive name or adapter parameter group
  std::string name;   // parameter within the group
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double tolerance = 0.0;
  std::size_t floored = 0;  // values judged against the floor rather than their own magnitude

  bool passed() const { return max_rel_error <= tolerance; }
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;

  bool passed() const {
    for (const auto& r : rows) {
      if (!r.passed()) return false;
    }
    return !rows.empty();
  }

  double max_rel_error(bool primitives) const {
    double m = 0.0;
    for (const auto& r : rows) {
      if (r.group.starts_with("op.") == primitives) m = std::max(m, r.max_rel_error);
    }
    return m;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      j.push_back({{"group", r.group},
                   {"name", r.name},
                   {"count", r.count},
                   {"max_rel_error", r.max_rel_error},
                   {"max_abs_error", r.max_abs_error},
                   {"tolerance", r.tolerance},
                   {"floored", r.floored},
                   {"passed", r.passed()}});
    }
    return j;
  }

  std::string render() const {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-24s %-14s %7s %8s %11s %11s %6s\n", "group", "parameter", "values", "floored",
                  "max rel", "max abs", "result");
    out += buf;
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%-24s %-14s %7zu %8zu %11.3e %11.3e %6s\n", r.group.c_str(), r.name.c_str(),
                    r.count, r.floored, r.max_rel_error, r.max_abs_error, r.passed() ? "pass" : "FAIL");
      out += buf;
    }
    return out;
  }
};

namespace detail {

inline std::vector<double> normal_values(std::mt19937_64& rng, std::size_t n, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline std::vector<double> positive_values(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> dist(0.5, 2.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

// Contracts an op output with a fixed random weight so every output value
// influences the scalar being differentiated.
inline Tensor contract(const Tensor& y, const std::vector<double>& weights) {
  return diffmath::sum(diffmath::hadamard(y, Tensor::constant(y.shape(), weights)));
}

struct PrimitiveCase {
  std::string name;
  ParameterSet inputs;
  std::function<Tensor(const BoundParameters&)> op;
};

inline std::vector<PrimitiveCase> primitive_cases(std::uint64_t seed) {
  using namespace diffmath;
  std::mt19937_64 rng(seed);
  std::vector<PrimitiveCase> cases;
  auto make = [&](std::string name, std::vector<std::pair<std::string, Shape>> shapes,
                  std::function<Tensor(const BoundParameters&)> op, bool positive = false) {
    PrimitiveCase c{std::move(name), {}, std::move(op)};
    for (auto& [n, s] : shapes) {
      c.inputs.add(n, s, positive ? positive_values(rng, shape_size(s)) : normal_values(rng, shape_size(s)));
    }
    cases.push_back(std::move(c));
  };

  make("matmul", {{"a", {3, 4}}, {"b", {4, 2}}}, [](const BoundParameters& w) { return matmul(w["a"], w["b"]); });
  make("matmul_nt", {{"a", {3, 4}}, {"b", {5, 4}}}, [](const BoundParameters& w) { return matmul_nt(w["a"], w["b"]); });
  make("add", {{"a", {2, 3}}, {"b", {2, 3}}}, [](const BoundParameters& w) { return add(w["a"], w["b"]); });
  make("add_broadcast_row", {{"x", {3, 4}}, {"b", {1, 4}}},
       [](const BoundParameters& w) { return add_broadcast(w["x"], w["b"]); });
  make("add_broadcast_col", {{"x", {3, 4}}, {"b", {3, 1}}},
       [](const BoundParameters& w) { return add_broadcast(w["x"], w["b"]); });
  make("add_broadcast_scalar", {{"x", {3, 4}}, {"b", {1, 1}}},
       [](const BoundParameters& w) { return add_broadcast(w["x"], w["b"]); });
  make("scale", {{"x", {2, 3}}}, [](const BoundParameters& w) { return scale(w["x"], -1.7); });
  make("hadamard", {{"a", {3, 2}}, {"b", {3, 2}}}, [](const BoundParameters& w) { return hadamard(w["a"], w["b"]); });
  make("sigmoid", {{"x", {3, 3}}}, [](const BoundParameters& w) { return sigmoid(w["x"]); });
  make("tanh", {{"x", {3, 3}}}, [](const BoundParameters& w) { return tanh(w["x"]); });
  make("gelu", {{"x", {3, 3}}}, [](const BoundParameters& w) { return gelu(w["x"]); });
  make("exp", {{"x", {3, 3}}}, [](const BoundParameters& w) { return exp(w["x"]); });
  make("log", {{"x", {3, 3}}}, [](const BoundParameters& w) { return log(w["x"]); }, true);
  make("sum", {{"x", {2, 3}}}, [](const BoundParameters& w) { return sum(w["x"]); });
  make("reduce_mean_rows", {{"x", {4, 3}}}, [](const BoundParameters& w) { return reduce_mean_rows(w["x"]); });
  make("softmax_cross_entropy", {{"z", {1, 7}}},
       [](const BoundParameters& w) { return softmax_cross_entropy(w["z"], 3); });
  make("cross_entropy_rows", {{"z", {4, 6}}}, [](const BoundParameters& w) {
    const std::size_t rows[] = {0, 2, 3};
    const int targets[] = {5, 0, 2};
    return cross_entropy_rows(w["z"], rows, targets);
  });
  make("transpose", {{"x", {2, 5}}}, [](const BoundParameters& w) { return transpose(w["x"]); });
  make("slice_rows", {{"x", {5, 3}}}, [](const BoundParameters& w) { return slice_rows(w["x"], 1, 3); });
  make("slice_cols", {{"x", {3, 5}}}, [](const BoundParameters& w) { return slice_cols(w["x"], 2, 2); });
  make("concat_rows", {{"a", {2, 3}}, {"b", {1, 3}}},
       [](const BoundParameters& w) { return concat_rows({w["a"], w["b"]}); });
  make("concat_cols", {{"a", {2, 3}}, {"b", {2, 2}}},
       [](const BoundParameters& w) { return concat_cols({w["a"], w["b"]}); });
  make("stack_columns", {{"a", {4, 1}}, {"b", {4, 1}}, {"c", {4, 1}}},
       [](const BoundParameters& w) { return stack_columns({w["a"], w["b"], w["c"]}); });
  make("embedding_lookup", {{"table", {6, 3}}}, [](const BoundParameters& w) {
    const int ids[] = {4, 1, 4, 0};
    return embedding_lookup(w["table"], ids);
  });
  make("layer_norm_rows", {{"x", {3, 5}}, {"g", {1, 5}}, {"b", {1, 5}}},
       [](const BoundParameters& w) { return layer_norm_rows(w["x"], w["g"], w["b"]); });
  make("causal_attention", {{"q", {4, 3}}, {"k", {4, 3}}},
       [](const BoundParameters& w) { return causal_attention_weights(w["q"], w["k"], 0.6); });
  return cases;
}

}  // namespace detail

/// Checks every primitive op against central differences.
inline std::vector<GradCheckRow> check_primitives(std::uint64_t seed, double tolerance,
                                                  diffmath::GradCheckOptions options = {}) {
  std::vector<GradCheckRow> rows;
  std::mt19937_64 rng(seed ^ 0xa0761d6478bd642fULL);
  for (auto& c : detail::primitive_cases(seed)) {
    // Output shape from one constant evaluation.
    const Tensor probe = c.op(c.inputs.constants());
    const auto weights = detail::normal_values(rng, probe.size());
    auto loss = [&](const BoundParameters& w) { return detail::contract(c.op(w), weights); };
    for (const GradCheckEntry& e : diffmath::gradient_check(c.inputs, loss, options)) {
      rows.push_back({"op." + c.name, e.name, e.count, e.max_rel_error, e.max_abs_error, tolerance, e.floored});
    }
  }
  return rows;
}

struct PipelineCheckSpec {
  adapter::AdapterConfig adapter;  // d_t must equal the backbone width
  lm::BackboneConfig backbone;
  std::size_t frames = 5;
  adapter::Variant variant = adapter::Variant::full;
  std::uint64_t seed = 1111;
  // Larger than the training init so label-loss gradients sit well above
  // finite-difference roundoff.
  double backbone_stddev = 0.5;
};

inline std::string parameter_group(const std::string& name) {
  const auto dot = name.find('.');
  if (name.starts_with("msf.s")) return name.substr(0, name.find('.', 4));
  return dot == std::string::npos ? name : name.substr(0, dot);
}

// Relative-error floor for the composed loss. A central difference with step
// 1e-5 on a loss of a few nats carries ~1e-9 absolute roundoff, so a floor
// below roundoff / tolerance would fail even exactly-zero gradients.
inline constexpr double kPipelineRelFloor = 1e-5;

/// Checks the label loss gradient of every adapter parameter, taken through
/// a seeded frozen backbone on one random sample.
inline std::vector<GradCheckRow> check_pipeline(const PipelineCheckSpec& spec, double tolerance,
                                                diffmath::GradCheckOptions options = {.step = 1e-5,
                                                                                      .rel_floor = kPipelineRelFloor}) {
  std::mt19937_64 rng(spec.seed);
  const auto backbone = lm::FrozenBackbone::freeze(spec.backbone, lm::init_backbone(spec.backbone, spec.seed, spec.backbone_stddev));
  const auto model = adapter::AdapterModel::init(spec.adapter, spec.variant, spec.seed + 1);

  corpus::FeatureSample sample;
  sample.id = "gradcheck";
  sample.text = "a short clip";
  sample.audio = {spec.frames, spec.adapter.d_a, detail::normal_values(rng, spec.frames * spec.adapter.d_a)};
  sample.vision = {spec.frames + 1, spec.adapter.d_v, detail::normal_values(rng, (spec.frames + 1) * spec.adapter.d_v)};
  sample.label = 3.0;
  const metrics::LabelCodec codec(corpus::Task::erc, 0.0, 6.0, 7, 0);
  const auto prepared = trainer::prepare_sample(sample, backbone, codec);
  const auto prompt = lm::tokenize(" Class:");

  auto loss = [&](const BoundParameters& w) { return trainer::sample_loss(model, backbone, w, prepared, prompt); };
  std::vector<GradCheckRow> rows;
  for (const GradCheckEntry& e : diffmath::gradient_check(model.params, loss, options)) {
    rows.push_back({parameter_group(e.name), e.name, e.count, e.max_rel_error, e.max_abs_error, tolerance, e.floored});
  }
  return rows;
}

}  // namespace mse::app
