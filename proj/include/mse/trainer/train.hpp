#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mse/adapter/adapter.hpp"
#include "mse/corpus/dataset.hpp"
#include "mse/lm/backbone.hpp"
#include "mse/metrics/label_codec.hpp"
#include "mse/metrics/metrics.hpp"
#include "mse/trainer/loss.hpp"
#include "mse/trainer/optimizer.hpp"

namespace mse::trainer {

using adapter::AdapterConfig;
using adapter::AdapterModel;
using adapter::Variant;
using corpus::Dataset;
using corpus::FeatureSample;
using lm::FrozenBackbone;
using metrics::LabelCodec;
using metrics::MetricReport;

inline const std::vector<std::uint64_t>& default_seeds() {
  static const std::vector<std::uint64_t> s = {1111, 2222, 3333, 4444, 5555};
  return s;
}

struct TrainConfig {
  double lr = 1e-3;
  double warmup_fraction = 0.1;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::vector<std::uint64_t> seeds = default_seeds();
  double clip_norm = 1.0;
  double weight_decay = 0.01;
  Variant variant = Variant::full;
  std::string preset = "synthetic";
  double train_fraction = 1.0;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup fraction must be in [0, 1)");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (seeds.empty()) throw ConfigError("seed list is empty");
    if (clip_norm < 0.0) throw ConfigError("clip norm must be non-negative");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train fraction must be in (0, 1]");
  }

  nlohmann::ordered_json to_json() const {
    return {{"lr", lr},
            {"warmup_fraction", warmup_fraction},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"seeds", seeds},
            {"clip_norm", clip_norm},
            {"weight_decay", weight_decay},
            {"variant", std::string(adapter::variant_name(variant))},
            {"preset", preset},
            {"train_fraction", train_fraction}};
  }
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;

  nlohmann::ordered_json to_json() const { return {{"step", step}, {"lr", lr}, {"loss", loss}}; }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  MetricReport valid;
};

// Model-ready view of one sample: tokenized text and constant feature tensors.
struct PreparedSample {
  const FeatureSample* source = nullptr;
  diffmath::Tensor audio;
  diffmath::Tensor vision;
  diffmath::Tensor text_embedding;
  std::vector<int> text_ids;
  std::vector<int> label_ids;  // formatted label followed by EOS
};

inline diffmath::Tensor feature_tensor(const corpus::FeatureMatrix& m) {
  return diffmath::Tensor::constant({m.rows, m.cols}, m.values);
}

inline PreparedSample prepare_sample(const FeatureSample& s, const FrozenBackbone& backbone, const LabelCodec& codec) {
  PreparedSample p;
  p.source = &s;
  p.text_ids = lm::tokenize(s.text);
  if (p.text_ids.empty()) throw InputError("sample " + s.id + ": empty transcript");
  p.audio = feature_tensor(s.audio);
  p.vision = feature_tensor(s.vision);
  p.text_embedding = backbone.embed_text(p.text_ids);
  p.label_ids = lm::tokenize(codec.format(s.label));
  p.label_ids.push_back(lm::kEos);
  return p;
}

inline std::vector<PreparedSample> prepare_split(const std::vector<const FeatureSample*>& samples,
                                                 const FrozenBackbone& backbone, const LabelCodec& codec) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const FeatureSample* s : samples) out.push_back(prepare_sample(*s, backbone, codec));
  return out;
}

/// Assembles [P; T; T_p (; label)] for one sample. The transcript is left out
/// of the language-model input for variants that drop text.
inline lm::AssembledInput assemble(const AdapterModel& model, const FrozenBackbone& backbone,
                                   const diffmath::BoundParameters& w, const PreparedSample& s,
                                   const std::vector<int>& prompt_ids, bool with_label) {
  const diffmath::Tensor pseudo = model.forward(s.text_embedding, s.audio, s.vision, w);
  std::span<const int> text;
  if (adapter::uses_text_input(model.variant)) text = s.text_ids;
  std::optional<std::span<const int>> label;
  if (with_label) label = std::span<const int>(s.label_ids);
  return backbone.assemble_input(pseudo, text, prompt_ids, label);
}

/// Label loss of one sample under teacher forcing.
inline diffmath::Tensor sample_loss(const AdapterModel& model, const FrozenBackbone& backbone,
                                    const diffmath::BoundParameters& w, const PreparedSample& s,
                                    const std::vector<int>& prompt_ids) {
  const lm::AssembledInput in = assemble(model, backbone, w, s, prompt_ids, true);
  // Logits block row k predicts label token k, i.e. label position k + 1 in
  // the block's own frame.
  const diffmath::Tensor logits = backbone.label_logits(in);
  std::vector<std::size_t> positions(s.label_ids.size());
  std::iota(positions.begin(), positions.end(), std::size_t{1});
  return label_loss(logits, positions, s.label_ids);
}

/// Longest label text plus EOS.
inline std::size_t max_label_tokens(const LabelCodec& codec) {
  if (codec.task() == corpus::Task::erc) return 2;
  return std::max(codec.format(codec.min()).size(), codec.format(codec.max()).size()) + 1;
}

struct Evaluation {
  MetricReport report;
  std::vector<std::string> generations;
  std::vector<double> predictions;
};

inline MetricReport compute_metrics(corpus::MetricFamily family, const std::vector<double>& preds,
                                    const std::vector<double>& golds, int num_classes) {
  switch (family) {
    case corpus::MetricFamily::mosei: return metrics::mosei_metrics(preds, golds);
    case corpus::MetricFamily::sims: return metrics::sims_metrics(preds, golds);
    case corpus::MetricFamily::erc: break;
  }
  std::vector<int> p(preds.size()), g(golds.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = static_cast<int>(preds[i]);
    g[i] = static_cast<int>(golds[i]);
  }
  return metrics::erc_metrics(p, g, num_classes);
}

/// Greedy generation, parsing and metrics over prepared samples.
inline Evaluation evaluate_prepared(const AdapterModel& model, const FrozenBackbone& backbone,
                                    const std::vector<PreparedSample>& samples, const corpus::DatasetPreset& preset) {
  if (samples.empty()) throw InputError("evaluation split is empty");
  const LabelCodec codec = LabelCodec::from_preset(preset);
  const auto prompt_ids = lm::tokenize(preset.prompt);
  const auto w = model.params.constants();
  const std::size_t max_new = max_label_tokens(codec);
  Evaluation ev;
  std::vector<double> golds;
  std::size_t fallbacks = 0;
  for (const PreparedSample& s : samples) {
    const lm::AssembledInput in = assemble(model, backbone, w, s, prompt_ids, false);
    std::string text = backbone.generate(in, max_new);
    ev.predictions.push_back(codec.parse(text, fallbacks).value);
    ev.generations.push_back(std::move(text));
    golds.push_back(s.source->label);
  }
  ev.report = compute_metrics(preset.family, ev.predictions, golds, preset.num_classes);
  ev.report.fallbacks = fallbacks;
  return ev;
}

inline Evaluation evaluate(const AdapterModel& model, const FrozenBackbone& backbone,
                           const std::vector<const FeatureSample*>& samples, const corpus::DatasetPreset& preset) {
  const auto prepared = prepare_split(samples, backbone, LabelCodec::from_preset(preset));
  return evaluate_prepared(model, backbone, prepared, preset);
}

struct TrainResult {
  AdapterModel best;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  std::optional<MetricReport> best_valid;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::uint64_t backbone_checksum = 0;
};

using StepCallback = std::function<void(const StepRecord&)>;
using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainHooks {
  StepCallback on_step;
  EpochCallback on_epoch;
};

/// Trains one adapter for one seed. Only the adapter's ParameterSet is
/// handed to the optimizer; the backbone is checked bit-identical at the end.
/// The checkpoint with the best validation primary metric is kept (earliest
/// wins ties); without a validation split, the last epoch's.
inline TrainResult train_run(const TrainConfig& config, const AdapterConfig& adapter_config, const Dataset& dataset,
                             const FrozenBackbone& backbone, std::uint64_t seed, const TrainHooks& hooks = {}) {
  config.validate();
  if (adapter_config.d_t != backbone.width()) {
    throw ConfigError("adapter d_t=" + std::to_string(adapter_config.d_t) + " differs from backbone width " +
                      std::to_string(backbone.width()));
  }
  if (adapter_config.d_a != dataset.preset.d_a || adapter_config.d_v != dataset.preset.d_v) {
    throw ConfigError("adapter feature widths do not match preset " + dataset.preset.name);
  }
  const std::uint64_t checksum_before = backbone.recompute_checksum();
  if (checksum_before != backbone.checksum()) throw InvariantError("backbone checksum drifted before training");

  const LabelCodec codec = LabelCodec::from_preset(dataset.preset);
  const auto prompt_ids = lm::tokenize(dataset.preset.prompt);
  const auto train = prepare_split(dataset.split(corpus::Split::train), backbone, codec);
  const auto valid = prepare_split(dataset.split(corpus::Split::valid), backbone, codec);
  if (train.empty()) throw InputError("training split is empty");

  AdapterModel model = AdapterModel::init(adapter_config, config.variant, seed);
  auto state = OptimizerState::for_parameters(model.params, {.weight_decay = config.weight_decay});
  TrainResult result{model, 0, std::nullopt, {}, {}, checksum_before};

  const std::size_t batches_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  const long total_steps = static_cast<long>(batches_per_epoch * config.epochs);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<std::vector<double>> grads;
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        diffmath::Tape tape;
        const auto w = model.params.bind(tape);
        const diffmath::Tensor loss = sample_loss(model, backbone, w, train[order[b]], prompt_ids);
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
      const double count = static_cast<double>(end - start);
      for (auto& g : grads) {
        for (double& x : g) x /= count;
      }
      clip_global_norm(grads, config.clip_norm);
      ++step;
      const double lr = lr_schedule(static_cast<long>(step), total_steps, config.lr, config.warmup_fraction);
      adamw_step(model.params, grads, state, lr);
      const StepRecord rec{step, lr, batch_loss / count};
      if (!std::isfinite(rec.loss)) throw NumericError("training loss became non-finite at step " + std::to_string(step));
      epoch_loss += batch_loss;
      result.steps.push_back(rec);
      if (hooks.on_step) hooks.on_step(rec);
    }
    EpochRecord er;
    er.epoch = epoch;
    er.train_loss = epoch_loss / static_cast<double>(train.size());
    if (!valid.empty()) {
      er.valid = evaluate_prepared(model, backbone, valid, dataset.preset).report;
      if (!result.best_valid || er.valid.primary() > result.best_valid->primary()) {
        result.best_valid = er.valid;
        result.best = model;
        result.best_epoch = epoch;
      }
    } else {
      result.best = model;
      result.best_epoch = epoch;
    }
    result.epochs.push_back(er);
    if (hooks.on_epoch) hooks.on_epoch(er);
  }

  if (backbone.recompute_checksum() != checksum_before) {
    throw InvariantError("backbone checksum changed during training");
  }
  return result;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::size_t best_epoch = 0;
  std::optional<MetricReport> valid;
  std::optional<MetricReport> test;
};

// Per-seed rows and their field-wise mean and population standard deviation
// over the seeds that succeeded.
struct RunReport {
  std::vector<SeedOutcome> seeds;
  std::optional<MetricReport> mean;
  std::optional<MetricReport> stddev;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["seeds"] = nlohmann::ordered_json::array();
    for (const auto& s : seeds) {
      nlohmann::ordered_json r;
      r["seed"] = s.seed;
      r["ok"] = s.ok;
      if (!s.ok) r["error"] = s.error;
      r["best_epoch"] = s.best_epoch;
      r["valid"] = s.valid ? s.valid->to_json() : nlohmann::ordered_json(nullptr);
      r["test"] = s.test ? s.test->to_json() : nlohmann::ordered_json(nullptr);
      j["seeds"].push_back(std::move(r));
    }
    j["mean"] = mean ? mean->to_json() : nlohmann::ordered_json(nullptr);
    j["stddev"] = stddev ? stddev->to_json() : nlohmann::ordered_json(nullptr);
    return j;
  }
};

/// Population standard deviation of every field across reports.
inline MetricReport stddev_reports(std::span<const MetricReport> reports, const MetricReport& mean) {
  MetricReport out;
  out.family = mean.family;
  for (const auto& [name, field] : MetricReport::fields()) {
    if (!(mean.*field)) continue;
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : reports) {
      if (r.*field) {
        const double d = *(r.*field) - *(mean.*field);
        s += d * d;
        ++n;
      }
    }
    out.*field = std::sqrt(s / static_cast<double>(n));
  }
  out.samples = mean.samples;
  return out;
}

inline RunReport summarize(std::vector<SeedOutcome> seeds) {
  RunReport report;
  report.seeds = std::move(seeds);
  std::vector<MetricReport> tests;
  for (const auto& s : report.seeds) {
    if (s.ok && s.test) tests.push_back(*s.test);
  }
  if (!tests.empty()) {
    report.mean = metrics::average_reports(tests);
    report.stddev = stddev_reports(tests, *report.mean);
  }
  return report;
}

struct SeedHooks {
  std::function<void(std::uint64_t seed, const TrainResult&)> on_trained;
  std::function<TrainHooks(std::uint64_t seed)> train_hooks;
};

/// Trains and tests one adapter per seed. Seed failures are recorded in the
/// report; an invariant breach aborts the whole run.
inline RunReport multi_seed_run(const TrainConfig& config, const AdapterConfig& adapter_config,
                                const Dataset& dataset, const FrozenBackbone& backbone, const SeedHooks& hooks = {}) {
  config.validate();
  std::vector<SeedOutcome> outcomes;
  for (std::uint64_t seed : config.seeds) {
    SeedOutcome o;
    o.seed = seed;
    try {
      const Dataset data =
          config.train_fraction < 1.0 ? corpus::subsample_train(dataset, config.train_fraction, seed) : dataset;
      const TrainResult tr =
          train_run(config, adapter_config, data, backbone, seed, hooks.train_hooks ? hooks.train_hooks(seed) : TrainHooks{});
      o.best_epoch = tr.best_epoch;
      o.valid = tr.best_valid;
      const auto test = data.split(corpus::Split::test);
      if (!test.empty()) o.test = evaluate(tr.best, backbone, test, data.preset).report;
      o.ok = true;
      if (hooks.on_trained) hooks.on_trained(seed, tr);
    } catch (const InvariantError&) {
      throw;
    } catch (const Error& e) {
      o.error = e.what();
    }
    outcomes.push_back(std::move(o));
  }
  return summarize(std::move(outcomes));
}

}  // namespace mse::trainer
