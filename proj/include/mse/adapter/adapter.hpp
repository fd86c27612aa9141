#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mse/adapter/config.hpp"
#include "mse/diffmath/ops.hpp"
#include "mse/diffmath/parameters.hpp"
#include "mse/io/checkpoint.hpp"

namespace mse::adapter {

using diffmath::BoundParameters;
using diffmath::ParameterSet;
using diffmath::Tensor;

enum class Modality { audio, vision };

// Gate blocks are laid out along columns in the order i, f, g, o.
struct LstmWeights {
  Tensor w_ih;  // [d x 4h]
  Tensor w_hh;  // [h x 4h]
  Tensor b;     // [1 x 4h]

  static LstmWeights from(const BoundParameters& w, Modality m) {
    const std::string p = m == Modality::audio ? "lstm_a." : "lstm_v.";
    return {w[p + "w_ih"], w[p + "w_hh"], w[p + "b"]};
  }
};

struct TgmWeights {
  Tensor w_t, b_t;  // [h x d_t], [h x 1]; undefined when the TGM is ablated
  Tensor w_v, b_v;  // [h x h_v], [h x 1]
  Tensor w_a, b_a;  // [h x h_a], [h x 1]

  static TgmWeights from(const BoundParameters& w) {
    TgmWeights t{Tensor(), Tensor(), w["tgm.w_v"], w["tgm.b_v"], w["tgm.w_a"], w["tgm.b_a"]};
    if (w.contains("tgm.w_t")) {
      t.w_t = w["tgm.w_t"];
      t.b_t = w["tgm.b_t"];
    }
    return t;
  }
};

struct MsfScale {
  Tensor w1, b1;  // [h/k x h], [h/k x 1]
  Tensor w2, b2;  // [h x h/k], [h x 1]
};

struct MsfWeights {
  std::vector<MsfScale> scales;
  Tensor conv_w;  // [K x 1] channel mix of the 1x1 convolution
  Tensor conv_b;  // [1 x 1]

  static MsfWeights from(const BoundParameters& w, std::size_t scale_count) {
    MsfWeights m;
    for (std::size_t i = 0; i < scale_count; ++i) {
      const std::string p = "msf.s" + std::to_string(i) + ".";
      m.scales.push_back({w[p + "w1"], w[p + "b1"], w[p + "w2"], w[p + "b2"]});
    }
    m.conv_w = w["msf.conv_w"];
    m.conv_b = w["msf.conv_b"];
    return m;
  }
};

struct ProjectorWeights {
  Tensor w3;  // [d_t x h]
  Tensor b3;  // [d_t x 1]
  Tensor w4;  // [n x 1]

  static ProjectorWeights from(const BoundParameters& w) { return {w["proj.w3"], w["proj.b3"], w["proj.w4"]}; }
};

/// Single-direction LSTM over x[l x d] from zero state; returns the final
/// hidden state as an [h x 1] column.
inline Tensor slstm_final(const Tensor& x, const LstmWeights& w) {
  using namespace diffmath;
  if (x.rank() != 2 || x.rows() == 0) throw InputError("sLSTM needs a non-empty [l x d] sequence");
  if (x.cols() != w.w_ih.rows()) {
    throw DimensionError("sLSTM input width " + std::to_string(x.cols()) + " differs from weights " +
                         shape_str(w.w_ih.shape()));
  }
  const std::size_t hidden = w.w_hh.rows();
  const Tensor xw = matmul(x, w.w_ih);
  Tensor h, c;
  for (std::size_t t = 0; t < x.rows(); ++t) {
    Tensor gates = add(slice_rows(xw, t, 1), w.b);
    if (t > 0) gates = add(gates, matmul(h, w.w_hh));
    const Tensor i = sigmoid(slice_cols(gates, 0, hidden));
    const Tensor f = sigmoid(slice_cols(gates, hidden, hidden));
    const Tensor g = tanh(slice_cols(gates, 2 * hidden, hidden));
    const Tensor o = sigmoid(slice_cols(gates, 3 * hidden, hidden));
    c = t > 0 ? add(hadamard(f, c), hadamard(i, g)) : hadamard(i, g);
    h = hadamard(o, tanh(c));
  }
  return transpose(h);
}

struct TgmOutput {
  Tensor vision;  // V~_t  [h x 1]
  Tensor audio;   // A~_t  [h x 1]
};

/// Text-Guide-Mixer: pools the text rows, projects text / vision / audio
/// summaries to width h and gates both non-text projections by the text
/// projection elementwise.
inline TgmOutput tgm(const Tensor& text, const Tensor& v_bar, const Tensor& a_bar, const TgmWeights& w) {
  using namespace diffmath;
  const Tensor t_bar = reduce_mean_rows(text);
  const Tensor t_tilde = add(matmul(w.w_t, transpose(t_bar)), w.b_t);
  const Tensor v_tilde = add(matmul(w.w_v, v_bar), w.b_v);
  const Tensor a_tilde = add(matmul(w.w_a, a_bar), w.b_a);
  return {hadamard(v_tilde, t_tilde), hadamard(a_tilde, t_tilde)};
}

/// Replacement used when the TGM is ablated: independent linear maps only.
inline TgmOutput linear_mix(const Tensor& v_bar, const Tensor& a_bar, const TgmWeights& w) {
  using namespace diffmath;
  return {add(matmul(w.w_v, v_bar), w.b_v), add(matmul(w.w_a, a_bar), w.b_a)};
}

/// Multi-Scale-Fusion. M = V~_t + A~_t; each scale is a GELU bottleneck MLP
/// h -> h/k -> h; the [h x K] stack is mixed by a 1x1 convolution, i.e. one
/// learned weight per scale plus a shared bias.
inline Tensor msf(const Tensor& vision, const Tensor& audio, const MsfWeights& w) {
  using namespace diffmath;
  const Tensor m = add(vision, audio);
  std::vector<Tensor> outs;
  outs.reserve(w.scales.size());
  for (const MsfScale& s : w.scales) {
    const Tensor hidden = gelu(add(matmul(s.w1, m), s.b1));
    outs.push_back(add(matmul(s.w2, hidden), s.b2));
  }
  return add_broadcast(matmul(stack_columns(outs), w.conv_w), w.conv_b);
}

/// Projector: u = W3 M~ + b3, P = W4 u^T. Every pseudo token is a multiple of u.
inline Tensor project(const Tensor& fused, const ProjectorWeights& w) {
  using namespace diffmath;
  const Tensor u = add(matmul(w.w3, fused), w.b3);
  return matmul(w.w4, transpose(u));
}

// Fixed modality summaries standing in for the sLSTM outputs in no_AV.
struct Substitutes {
  Tensor v_bar;  // [h_v x 1]
  Tensor a_bar;  // [h_a x 1]
};

/// Full pipeline T, V, A -> P under the given ablation variant.
inline Tensor adapter_forward(const Tensor& text, const Tensor& audio, const Tensor& vision, const BoundParameters& w,
                              const AdapterConfig& config, Variant variant = Variant::full,
                              const Substitutes& subst = {}) {
  if (text.rank() != 2 || text.cols() != config.d_t) {
    throw DimensionError("text embedding " + diffmath::shape_str(text.shape()) + " does not match d_t=" +
                         std::to_string(config.d_t));
  }
  if (audio.rank() != 2 || audio.cols() != config.d_a) {
    throw DimensionError("audio features " + diffmath::shape_str(audio.shape()) + " do not match d_a=" +
                         std::to_string(config.d_a));
  }
  if (vision.rank() != 2 || vision.cols() != config.d_v) {
    throw DimensionError("vision features " + diffmath::shape_str(vision.shape()) + " do not match d_v=" +
                         std::to_string(config.d_v));
  }
  Tensor v_bar, a_bar;
  if (variant == Variant::no_AV) {
    if (!subst.v_bar.defined() || !subst.a_bar.defined()) throw ConfigError("no_AV needs substitute summaries");
    v_bar = subst.v_bar;
    a_bar = subst.a_bar;
  } else {
    v_bar = uses_vision(variant) ? slstm_final(vision, LstmWeights::from(w, Modality::vision))
                                 : Tensor::zeros({config.h_v, 1});
    a_bar = uses_audio(variant) ? slstm_final(audio, LstmWeights::from(w, Modality::audio))
                                : Tensor::zeros({config.h_a, 1});
  }
  const TgmWeights tw = TgmWeights::from(w);
  const TgmOutput mixed = uses_tgm(variant) ? tgm(text, v_bar, a_bar, tw) : linear_mix(v_bar, a_bar, tw);
  const Tensor fused = uses_msf(variant) ? msf(mixed.vision, mixed.audio, MsfWeights::from(w, config.k_set.size()))
                                         : diffmath::add(mixed.vision, mixed.audio);
  return project(fused, ProjectorWeights::from(w));
}

inline bool parameter_in_variant(const std::string& name, Variant v) {
  if (name.starts_with("lstm_v.")) return uses_vision(v);
  if (name.starts_with("lstm_a.")) return uses_audio(v);
  if (name == "tgm.w_t" || name == "tgm.b_t") return uses_tgm(v);
  if (name.starts_with("msf.")) return uses_msf(v);
  return true;
}

/// Full parameter set. Weights and biases are uniform in +-1/sqrt(fan_in);
/// LSTM forget-gate biases start at 1.0.
inline ParameterSet init_full_parameters(const AdapterConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](std::size_t count, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> out(count);
    for (double& v : out) v = dist(rng);
    return out;
  };
  ParameterSet p;
  auto add_lstm = [&](const std::string& prefix, std::size_t d, std::size_t hidden) {
    p.add(prefix + "w_ih", {d, 4 * hidden}, uniform(d * 4 * hidden, d));
    p.add(prefix + "w_hh", {hidden, 4 * hidden}, uniform(hidden * 4 * hidden, hidden));
    auto b = uniform(4 * hidden, hidden);
    std::fill(b.begin() + static_cast<std::ptrdiff_t>(hidden), b.begin() + static_cast<std::ptrdiff_t>(2 * hidden), 1.0);
    p.add(prefix + "b", {1, 4 * hidden}, std::move(b));
  };
  auto add_linear = [&](const std::string& w, const std::string& b, std::size_t out, std::size_t in) {
    p.add(w, {out, in}, uniform(out * in, in));
    p.add(b, {out, 1}, uniform(out, in));
  };
  add_lstm("lstm_v.", c.d_v, c.h_v);
  add_lstm("lstm_a.", c.d_a, c.h_a);
  add_linear("tgm.w_t", "tgm.b_t", c.h, c.d_t);
  add_linear("tgm.w_v", "tgm.b_v", c.h, c.h_v);
  add_linear("tgm.w_a", "tgm.b_a", c.h, c.h_a);
  for (std::size_t i = 0; i < c.k_set.size(); ++i) {
    const std::size_t r = c.h / c.k_set[i];
    const std::string s = "msf.s" + std::to_string(i) + ".";
    add_linear(s + "w1", s + "b1", r, c.h);
    add_linear(s + "w2", s + "b2", c.h, r);
  }
  const std::size_t k = c.k_set.size();
  p.add("msf.conv_w", {k, 1}, uniform(k, k));
  p.add("msf.conv_b", {1, 1}, uniform(1, k));
  add_linear("proj.w3", "proj.b3", c.d_t, c.h);
  p.add("proj.w4", {c.n, 1}, uniform(c.n, 1));
  return p;
}

// A trainable adapter: configuration, variant, the variant's parameters
// (exactly the optimizer's set) and, for no_AV, the fixed substitutes.
struct AdapterModel {
  inline static constexpr const char* kMagic = "MSEA";

  AdapterConfig config;
  Variant variant = Variant::full;
  ParameterSet params;
  Substitutes substitutes;

  /// Parameters shared between variants get identical initial values for a
  /// given seed; no_AV substitutes come from a separate stream of the seed.
  static AdapterModel init(const AdapterConfig& config, Variant variant, std::uint64_t seed) {
    AdapterModel m;
    m.config = config;
    m.variant = variant;
    const ParameterSet full = init_full_parameters(config, seed);
    for (std::size_t i = 0; i < full.size(); ++i) {
      if (!parameter_in_variant(full.name(i), variant)) continue;
      m.params.add(full.name(i), full.shape(i), {full.values(i).begin(), full.values(i).end()});
    }
    if (variant == Variant::no_AV) {
      std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      std::vector<double> v(config.h_v), a(config.h_a);
      for (double& x : v) x = dist(rng);
      for (double& x : a) x = dist(rng);
      m.substitutes = {Tensor::constant({config.h_v, 1}, std::move(v)), Tensor::constant({config.h_a, 1}, std::move(a))};
    }
    return m;
  }

  Tensor forward(const Tensor& text, const Tensor& audio, const Tensor& vision, const BoundParameters& w) const {
    return adapter_forward(text, audio, vision, w, config, variant, substitutes);
  }

  io::Checkpoint to_checkpoint(const nlohmann::json& extra = nlohmann::json::object()) const {
    io::Checkpoint ckpt;
    ckpt.magic = kMagic;
    ckpt.config = {{"adapter", config.to_json()}, {"variant", std::string(variant_name(variant))}, {"extra", extra}};
    ckpt.tensors = io::to_stored(params);
    if (substitutes.v_bar.defined()) {
      for (auto [name, t] : {std::pair{"subst.v_bar", substitutes.v_bar}, std::pair{"subst.a_bar", substitutes.a_bar}}) {
        ckpt.tensors.push_back({name, t.shape(), {t.values().begin(), t.values().end()}});
      }
    }
    return ckpt;
  }

  static AdapterModel from_checkpoint(const io::Checkpoint& ckpt) {
    AdapterModel m;
    m.config = AdapterConfig::from_json(ckpt.config.at("adapter"));
    m.variant = parse_variant(ckpt.config.at("variant").get<std::string>());
    for (const auto& t : ckpt.tensors) {
      if (t.name == "subst.v_bar") {
        m.substitutes.v_bar = Tensor::constant(t.shape, t.values);
      } else if (t.name == "subst.a_bar") {
        m.substitutes.a_bar = Tensor::constant(t.shape, t.values);
      } else {
        m.params.add(t.name, t.shape, t.values);
      }
    }
    return m;
  }

  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const {
    io::save_checkpoint(path, to_checkpoint(extra));
  }
};

}  // namespace mse::adapter
