#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mse/lm/backbone.hpp"
#include "mse/trainer/optimizer.hpp"

namespace mse::lm {

struct PretrainOptions {
  std::size_t steps = 1500;
  std::uint64_t seed = 1111;
  std::size_t batch_size = 8;
  double lr = 3e-3;
  double warmup_fraction = 0.1;
  double clip_norm = 1.0;
};

struct PretrainResult {
  FrozenBackbone backbone;
  // Mean per-token next-token loss of each step's batch.
  std::vector<double> losses;
};

// Marker bytes for label hints, one per distinct label text.
inline constexpr std::string_view kHintAlphabet = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";

struct CorpusOptions {
  std::size_t count = 600;
  std::size_t hint_width = 4;
  std::uint64_t seed = 1111;
};

/// Pretraining strings `hint + text + prompt + label`. The hint repeats the
/// marker byte of the label hint_width times, so the model learns to read the
/// answer from the start of its input; text and label are drawn uniformly and
/// independently.
inline std::vector<std::string> hinted_corpus(const std::vector<std::string>& texts, const std::string& prompt,
                                              const std::vector<std::string>& labels, const CorpusOptions& options) {
  if (texts.empty()) throw InputError("pretraining corpus needs at least one text");
  if (labels.empty()) throw InputError("pretraining corpus needs at least one label");
  if (labels.size() > kHintAlphabet.size()) {
    throw InputError(std::to_string(labels.size()) + " distinct labels exceed the " +
                     std::to_string(kHintAlphabet.size()) + " hint markers");
  }
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick_text(0, texts.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_label(0, labels.size() - 1);
  std::vector<std::string> out;
  out.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    const std::size_t l = pick_label(rng);
    out.push_back(std::string(options.hint_width, kHintAlphabet[l]) + texts[pick_text(rng)] + prompt + labels[l]);
  }
  return out;
}

/// Mean next-token cross-entropy of one string followed by EOS.
inline Tensor sequence_loss(const BoundParameters& w, const BackboneConfig& config, const std::vector<int>& ids) {
  std::vector<int> inputs(ids.begin(), ids.end() - 1);
  std::vector<int> targets(ids.begin() + 1, ids.end());
  std::vector<std::size_t> rows(targets.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  Tensor logits = transformer_logits(w, config, diffmath::embedding_lookup(w["tok_emb"], inputs));
  return diffmath::scale(diffmath::cross_entropy_rows(logits, rows, targets), 1.0 / static_cast<double>(rows.size()));
}

/// Trains a fresh backbone on next-token prediction over `corpus` (each
/// string terminated by EOS), then freezes it.
inline PretrainResult pretrain_backbone(const std::vector<std::string>& corpus, const BackboneConfig& config,
                                        const PretrainOptions& options) {
  if (corpus.empty()) throw InputError("pretraining corpus is empty");
  config.validate();
  std::vector<std::vector<int>> sequences;
  for (const std::string& s : corpus) {
    auto ids = tokenize(s);
    ids.push_back(kEos);
    if (ids.size() < 2) ids.insert(ids.begin(), kBos);
    if (ids.size() - 1 > config.max_seq) {
      throw LengthError("corpus string of " + std::to_string(ids.size()) + " tokens exceeds max sequence length");
    }
    sequences.push_back(std::move(ids));
  }

  ParameterSet params = init_backbone(config, options.seed);
  auto state = trainer::OptimizerState::for_parameters(params, {.weight_decay = 0.0});
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  PretrainResult result{FrozenBackbone::freeze(config, params), {}};
  const std::size_t batch = std::min(options.batch_size, sequences.size());
  for (std::size_t step = 0; step < options.steps; ++step) {
    std::vector<std::vector<double>> grads;
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto& ids = sequences[order[cursor++]];
      diffmath::Tape tape;
      BoundParameters w = params.bind(tape);
      Tensor loss = sequence_loss(w, config, ids);
      tape.backward(loss);
      batch_loss += loss.item();
      auto g = w.gradients();
      if (grads.empty()) {
        grads = std::move(g);
      } else {
        for (std::size_t i = 0; i < grads.size(); ++i) {
          for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += g[i][j];
        }
      }
    }
    for (auto& g : grads) {
      for (double& x : g) x /= static_cast<double>(batch);
    }
    result.losses.push_back(batch_loss / static_cast<double>(batch));
    trainer::clip_global_norm(grads, options.clip_norm);
    const double lr = trainer::lr_schedule(static_cast<long>(step + 1), static_cast<long>(options.steps), options.lr,
                                           options.warmup_fraction);
    trainer::adamw_step(params, grads, state, lr);
  }
  result.backbone = FrozenBackbone::freeze(config, params);
  return result;
}

}  // namespace mse::lm
