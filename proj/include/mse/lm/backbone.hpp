#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mse/diffmath/ops.hpp"
#include "mse/diffmath/parameters.hpp"
#include "mse/io/checkpoint.hpp"
#include "mse/lm/vocabulary.hpp"

namespace mse::lm {

using diffmath::BoundParameters;
using diffmath::ParameterSet;
using diffmath::Tensor;

struct BackboneConfig {
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ffn_mult = 4;
  std::size_t max_seq = 256;

  void validate() const {
    if (d_model == 0 || layers == 0 || heads == 0 || ffn_mult == 0 || max_seq == 0) {
      throw ConfigError("backbone extents must be positive");
    }
    if (d_model % heads != 0) {
      throw ConfigError("backbone width " + std::to_string(d_model) + " not divisible by " +
                        std::to_string(heads) + " heads");
    }
  }

  nlohmann::json to_json() const {
    return {{"d_model", d_model}, {"layers", layers}, {"heads", heads}, {"ffn_mult", ffn_mult}, {"max_seq", max_seq}};
  }

  static BackboneConfig from_json(const nlohmann::json& j) {
    BackboneConfig c;
    c.d_model = j.at("d_model").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.ffn_mult = j.at("ffn_mult").get<std::size_t>();
    c.max_seq = j.at("max_seq").get<std::size_t>();
    c.validate();
    return c;
  }
};

inline std::string layer_name(std::size_t layer, const char* leaf) {
  return "layer" + std::to_string(layer) + "." + leaf;
}

/// Seeded initial weights: N(0, stddev) for embeddings and projections
/// (residual output projections scaled by 1/sqrt(2 * layers)), unit
/// layer-norm gains, zero biases.
inline ParameterSet init_backbone(const BackboneConfig& config, std::uint64_t seed, double stddev = 0.02) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model;
  const std::size_t f = d * config.ffn_mult;
  auto normal = [&](std::size_t n, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> out(n);
    for (double& v : out) v = dist(rng);
    return out;
  };
  const double resid_std = stddev / std::sqrt(2.0 * static_cast<double>(config.layers));

  ParameterSet p;
  p.add("tok_emb", {kVocabSize, d}, normal(kVocabSize * d, stddev));
  p.add("pos_emb", {config.max_seq, d}, normal(config.max_seq * d, stddev));
  for (std::size_t l = 0; l < config.layers; ++l) {
    p.add(layer_name(l, "ln1.g"), {1, d}, std::vector<double>(d, 1.0));
    p.add(layer_name(l, "ln1.b"), {1, d}, std::vector<double>(d, 0.0));
    p.add(layer_name(l, "attn.w_qkv"), {d, 3 * d}, normal(d * 3 * d, stddev));
    p.add(layer_name(l, "attn.b_qkv"), {1, 3 * d}, std::vector<double>(3 * d, 0.0));
    p.add(layer_name(l, "attn.w_o"), {d, d}, normal(d * d, resid_std));
    p.add(layer_name(l, "attn.b_o"), {1, d}, std::vector<double>(d, 0.0));
    p.add(layer_name(l, "ln2.g"), {1, d}, std::vector<double>(d, 1.0));
    p.add(layer_name(l, "ln2.b"), {1, d}, std::vector<double>(d, 0.0));
    p.add(layer_name(l, "mlp.w_fc"), {d, f}, normal(d * f, stddev));
    p.add(layer_name(l, "mlp.b_fc"), {1, f}, std::vector<double>(f, 0.0));
    p.add(layer_name(l, "mlp.w_proj"), {f, d}, normal(f * d, resid_std));
    p.add(layer_name(l, "mlp.b_proj"), {1, d}, std::vector<double>(d, 0.0));
  }
  p.add("ln_f.g", {1, d}, std::vector<double>(d, 1.0));
  p.add("ln_f.b", {1, d}, std::vector<double>(d, 0.0));
  return p;
}

/// Pre-norm causal decoder over an already-embedded sequence [I_l x d].
/// Adds learned positions and returns the final normalized hidden states
/// [I_l x d].
inline Tensor transformer_hidden(const BoundParameters& w, const BackboneConfig& config, const Tensor& input) {
  using namespace diffmath;
  const std::size_t len = input.rows();
  if (len > config.max_seq) {
    throw LengthError("input length " + std::to_string(len) + " exceeds max sequence length " +
                      std::to_string(config.max_seq));
  }
  if (input.cols() != config.d_model) {
    throw DimensionError("input width " + std::to_string(input.cols()) + " differs from backbone width " +
                         std::to_string(config.d_model));
  }
  const std::size_t d = config.d_model;
  const std::size_t hd = d / config.heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor x = add(input, slice_rows(w["pos_emb"], 0, len));
  for (std::size_t l = 0; l < config.layers; ++l) {
    Tensor h = layer_norm_rows(x, w[layer_name(l, "ln1.g")], w[layer_name(l, "ln1.b")]);
    Tensor qkv = add_broadcast(matmul(h, w[layer_name(l, "attn.w_qkv")]), w[layer_name(l, "attn.b_qkv")]);
    std::vector<Tensor> heads;
    heads.reserve(config.heads);
    for (std::size_t hi = 0; hi < config.heads; ++hi) {
      Tensor q = slice_cols(qkv, hi * hd, hd);
      Tensor k = slice_cols(qkv, d + hi * hd, hd);
      Tensor v = slice_cols(qkv, 2 * d + hi * hd, hd);
      heads.push_back(matmul(causal_attention_weights(q, k, att_scale), v));
    }
    Tensor attn = config.heads == 1 ? heads.front() : concat_cols(heads);
    x = add(x, add_broadcast(matmul(attn, w[layer_name(l, "attn.w_o")]), w[layer_name(l, "attn.b_o")]));

    Tensor h2 = layer_norm_rows(x, w[layer_name(l, "ln2.g")], w[layer_name(l, "ln2.b")]);
    Tensor ff = gelu(add_broadcast(matmul(h2, w[layer_name(l, "mlp.w_fc")]), w[layer_name(l, "mlp.b_fc")]));
    x = add(x, add_broadcast(matmul(ff, w[layer_name(l, "mlp.w_proj")]), w[layer_name(l, "mlp.b_proj")]));
  }
  return layer_norm_rows(x, w["ln_f.g"], w["ln_f.b"]);
}

/// Logits [I_l x V] through the tied token embedding.
inline Tensor transformer_logits(const BoundParameters& w, const BackboneConfig& config, const Tensor& input) {
  return diffmath::matmul_nt(transformer_hidden(w, config, input), w["tok_emb"]);
}

// The embedded model input I = [P; T; T_p (; label)] with its segment
// boundaries. Segments occupy [0, pseudo_end), [pseudo_end, text_end),
// [text_end, prompt_end) and [prompt_end, length()).
struct AssembledInput {
  Tensor embedded;
  std::size_t pseudo_end = 0;
  std::size_t text_end = 0;
  std::size_t prompt_end = 0;
  std::vector<std::size_t> label_positions;

  std::size_t length() const { return embedded.defined() ? embedded.rows() : 0; }
};

class FrozenBackbone {
 public:
  inline static constexpr const char* kMagic = "MSEB";

  static FrozenBackbone freeze(const BackboneConfig& config, const ParameterSet& params) {
    config.validate();
    FrozenBackbone b;
    b.config_ = config;
    b.weights_ = params.constants();
    b.checksum_ = b.recompute_checksum();
    return b;
  }

  const BackboneConfig& config() const { return config_; }
  std::size_t width() const { return config_.d_model; }
  std::uint64_t checksum() const { return checksum_; }

  // Hash over the weights actually used by forward passes.
  std::uint64_t recompute_checksum() const { return io::checkpoint_checksum(to_checkpoint()); }

  void verify() const {
    if (recompute_checksum() != checksum_) throw InvariantError("frozen backbone weights changed (checksum drift)");
  }

  Tensor embed_text(std::span<const int> ids) const { return diffmath::embedding_lookup(weights_["tok_emb"], ids); }

  /// Row-concatenates P, embedded text, embedded prompt and (for teacher
  /// forcing) embedded label ids. An undefined P means zero pseudo tokens.
  AssembledInput assemble_input(const Tensor& pseudo, std::span<const int> text_ids, std::span<const int> prompt_ids,
                                std::optional<std::span<const int>> label_ids = std::nullopt) const {
    std::vector<Tensor> parts;
    AssembledInput in;
    if (pseudo.defined()) {
      if (pseudo.rank() != 2 || pseudo.cols() != width()) {
        throw DimensionError("pseudo tokens " + diffmath::shape_str(pseudo.shape()) + " do not match backbone width " +
                             std::to_string(width()));
      }
      parts.push_back(pseudo);
      in.pseudo_end = pseudo.rows();
    }
    in.text_end = in.pseudo_end + text_ids.size();
    in.prompt_end = in.text_end + prompt_ids.size();
    if (!text_ids.empty()) parts.push_back(embed_text(text_ids));
    if (!prompt_ids.empty()) parts.push_back(embed_text(prompt_ids));
    if (label_ids && !label_ids->empty()) {
      parts.push_back(embed_text(*label_ids));
      for (std::size_t k = 0; k < label_ids->size(); ++k) in.label_positions.push_back(in.prompt_end + k);
    }
    if (parts.empty()) throw DimensionError("assembled input is empty");
    in.embedded = parts.size() == 1 ? parts.front() : diffmath::concat_rows(parts);
    return in;
  }

  Tensor forward_logits(const AssembledInput& input) const {
    return transformer_logits(weights_, config_, input.embedded);
  }

  Tensor forward_hidden(const AssembledInput& input) const {
    return transformer_hidden(weights_, config_, input.embedded);
  }

  /// Logits of hidden rows [first, first + count) only.
  Tensor unembed_rows(const Tensor& hidden, std::size_t first, std::size_t count) const {
    return diffmath::matmul_nt(diffmath::slice_rows(hidden, first, count), weights_["tok_emb"]);
  }

  /// Logits of the rows that predict the label tokens: row p - 1 for every
  /// label position p, as a [N x V] block.
  Tensor label_logits(const AssembledInput& input) const {
    if (input.label_positions.empty()) throw StateError("assembled input carries no label tokens");
    if (input.prompt_end == 0) throw IndexError("first label token has no preceding position");
    return unembed_rows(forward_hidden(input), input.prompt_end - 1, input.label_positions.size());
  }

  /// Greedy decoding: appends the argmax token until EOS or max_new tokens.
  /// Returns only the generated bytes.
  std::string generate(const AssembledInput& input, std::size_t max_new) const {
    std::vector<int> generated;
    Tensor seq = input.embedded;
    for (std::size_t step = 0; step < max_new; ++step) {
      if (seq.rows() > config_.max_seq) break;
      Tensor logits = unembed_rows(transformer_hidden(weights_, config_, seq), seq.rows() - 1, 1);
      const int next = static_cast<int>(diffmath::argmax_row(logits, 0));
      if (next == kEos) break;
      generated.push_back(next);
      if (seq.rows() == config_.max_seq) break;
      const int ids[1] = {next};
      seq = diffmath::concat_rows({seq, embed_text(ids)});
    }
    return detokenize(generated);
  }

  io::Checkpoint to_checkpoint() const {
    io::Checkpoint ckpt;
    ckpt.magic = kMagic;
    ckpt.config = config_.to_json();
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      const Tensor& t = weights_.at(i);
      ckpt.tensors.push_back({weights_.name(i), t.shape(), {t.values().begin(), t.values().end()}});
    }
    return ckpt;
  }

  static FrozenBackbone from_checkpoint(const io::Checkpoint& ckpt) {
    return freeze(BackboneConfig::from_json(ckpt.config), io::to_parameters(ckpt.tensors));
  }

  void save(const std::filesystem::path& path) const { io::save_checkpoint(path, to_checkpoint()); }

  static FrozenBackbone load(const std::filesystem::path& path) {
    return from_checkpoint(io::load_checkpoint(path, kMagic));
  }

 private:
  FrozenBackbone() = default;

  BackboneConfig config_;
  BoundParameters weights_;
  std::uint64_t checksum_ = 0;
};

}  // namespace mse::lm
