#pragma once

// The six subcommands. Each writes effective_config.json plus its outputs
// under RunConfig::output_dir and never touches its inputs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mse/app/gradcheck_suite.hpp"
#include "mse/app/run_config.hpp"
#include "mse/corpus/synthetic.hpp"
#include "mse/lm/pretrain.hpp"
#include "mse/metrics/metrics.hpp"
#include "mse/trainer/train.hpp"

namespace mse::app {

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw InputError("cannot write " + path.string());
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2, ' ', false) + "\n"); }

// Line-delimited JSON writer for logs.
class JsonLines {
 public:
  explicit JsonLines(const std::filesystem::path& path) {
    std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw InputError("cannot write " + path.string());
  }
  void write(const json& j) { out_ << j.dump(-1, ' ', false) << "\n"; }

 private:
  std::ofstream out_;
};

inline void require_path(const std::filesystem::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string("'") + key + "' must be set for this command");
}

/// Loads the configured dataset and applies the prompt override.
inline corpus::Dataset load_configured_dataset(const RunConfig& c) {
  require_path(c.dataset, "dataset");
  corpus::Dataset ds = corpus::load_dataset(c.dataset);
  if (c.prompt) ds.preset.prompt = *c.prompt;
  return ds;
}

inline adapter::AdapterConfig adapter_for(const RunConfig& c, const corpus::DatasetPreset& preset,
                                          const lm::FrozenBackbone& backbone) {
  adapter::AdapterConfig a = c.adapter;
  a.d_a = preset.d_a;
  a.d_v = preset.d_v;
  a.d_t = backbone.width();
  a.validate();
  return a;
}

// ---------------------------------------------------------------- synth

inline corpus::SyntheticDataset cmd_synth(const RunConfig& c, std::ostream& log) {
  write_effective_config(c, "synth");
  auto syn = corpus::generate_synthetic(c.synth);
  if (c.prompt) syn.dataset.preset.prompt = *c.prompt;
  corpus::save_dataset(c.output_dir, syn.dataset);
  write_json(c.output_dir / "synthetic_spec.json",
             {{"spec", c.synth.to_json()}, {"audio_means", syn.audio_means}, {"vision_means", syn.vision_means}});
  log << "wrote " << syn.dataset.samples.size() << " samples to " << c.output_dir.string() << "\n";
  return syn;
}

// ---------------------------------------------------------------- pretrain-backbone

struct PretrainingSource {
  std::vector<std::string> texts;
  std::vector<std::string> labels;
  std::string prompt;
};

/// Transcripts and distinct label texts of the dataset's training split, or
/// of the synthetic generator when no dataset is configured.
inline PretrainingSource pretraining_source(const RunConfig& c) {
  PretrainingSource src;
  corpus::DatasetPreset preset;
  std::set<std::string> labels;
  std::set<std::string> texts;
  if (c.dataset.empty()) {
    preset = corpus::synthetic_preset(c.synth);
    const auto codec = metrics::LabelCodec::from_preset(preset);
    for (int k = 0; k < c.synth.num_classes; ++k) {
      labels.insert(codec.format(c.synth.task == corpus::Task::msa ? corpus::synthetic_score(k, c.synth.num_classes)
                                                                   : static_cast<double>(k)));
    }
    texts.insert(corpus::synthetic_templates().begin(), corpus::synthetic_templates().end());
  } else {
    const corpus::Dataset ds = load_configured_dataset(c);
    preset = ds.preset;
    const auto codec = metrics::LabelCodec::from_preset(preset);
    for (const auto* s : ds.split(corpus::Split::train)) {
      labels.insert(codec.format(s->label));
      texts.insert(s->text);
    }
  }
  src.texts.assign(texts.begin(), texts.end());
  src.labels.assign(labels.begin(), labels.end());
  src.prompt = c.prompt ? *c.prompt : preset.prompt;
  return src;
}

inline lm::FrozenBackbone cmd_pretrain_backbone(const RunConfig& c, std::ostream& log) {
  write_effective_config(c, "pretrain-backbone");
  const PretrainingSource src = pretraining_source(c);
  const auto corpus = lm::hinted_corpus(src.texts, src.prompt, src.labels,
                                        {.count = c.pretrain_corpus, .hint_width = c.adapter.n, .seed = c.seed});
  const auto result = lm::pretrain_backbone(corpus, c.backbone, c.pretrain);
  {
    JsonLines lines(c.output_dir / "pretrain_log.jsonl");
    for (std::size_t i = 0; i < result.losses.size(); ++i) lines.write({{"step", i + 1}, {"loss", result.losses[i]}});
  }
  const auto path = c.output_dir / "backbone.mseb";
  result.backbone.save(path);
  // Reload to prove the file verifies.
  const auto reloaded = lm::FrozenBackbone::load(path);
  if (reloaded.checksum() != result.backbone.checksum()) throw InvariantError("saved backbone does not reload identically");
  log << "backbone " << path.string() << " checksum " << hex64(result.backbone.checksum());
  if (!result.losses.empty()) log << " final loss " << result.losses.back();
  log << "\n";
  return result.backbone;
}

inline lm::FrozenBackbone load_configured_backbone(const RunConfig& c) {
  require_path(c.backbone_path, "backbone_path");
  return lm::FrozenBackbone::load(c.backbone_path);
}

// ---------------------------------------------------------------- train

inline json seed_extra(const trainer::TrainConfig& tc, const corpus::Dataset& ds, const lm::FrozenBackbone& backbone,
                       std::uint64_t seed, const trainer::TrainResult& tr) {
  return {{"seed", seed},
          {"best_epoch", tr.best_epoch},
          {"best_valid", tr.best_valid ? tr.best_valid->to_json() : json(nullptr)},
          {"backbone_checksum", hex64(backbone.checksum())},
          {"dataset", ds.preset.name},
          {"prompt", ds.preset.prompt},
          {"train", tc.to_json()}};
}

/// Trains every configured seed, writing per-seed checkpoints and logs.
inline trainer::RunReport run_training(const RunConfig& c, const trainer::TrainConfig& tc, const corpus::Dataset& ds,
                                       const lm::FrozenBackbone& backbone, const std::filesystem::path& out,
                                       std::ostream& log) {
  const adapter::AdapterConfig ac = adapter_for(c, ds.preset, backbone);
  std::map<std::uint64_t, std::unique_ptr<JsonLines>> step_logs, epoch_logs;
  trainer::SeedHooks hooks;
  hooks.train_hooks = [&](std::uint64_t seed) {
    const auto dir = out / ("seed_" + std::to_string(seed));
    step_logs[seed] = std::make_unique<JsonLines>(dir / "train_log.jsonl");
    epoch_logs[seed] = std::make_unique<JsonLines>(dir / "epochs.jsonl");
    trainer::TrainHooks th;
    th.on_step = [&, seed](const trainer::StepRecord& r) { step_logs[seed]->write(r.to_json()); };
    th.on_epoch = [&, seed](const trainer::EpochRecord& e) {
      epoch_logs[seed]->write({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"valid", e.valid.to_json()}});
      log << "seed " << seed << " epoch " << e.epoch << " loss " << e.train_loss << " valid "
          << metrics::format_metric(e.valid.family == "erc" ? "Acc" : "Acc-2",
                                    e.valid.family == "erc" ? e.valid.acc : e.valid.acc2)
          << "\n";
    };
    return th;
  };
  hooks.on_trained = [&](std::uint64_t seed, const trainer::TrainResult& tr) {
    tr.best.save(out / ("seed_" + std::to_string(seed)) / "adapter.msea", seed_extra(tc, ds, backbone, seed, tr));
  };
  auto report = trainer::multi_seed_run(tc, ac, ds, backbone, hooks);
  for (const auto& s : report.seeds) {
    if (!s.ok) log << "seed " << s.seed << " failed: " << s.error << "\n";
  }
  return report;
}

inline trainer::RunReport cmd_train(const RunConfig& c, std::ostream& log) {
  write_effective_config(c, "train");
  const corpus::Dataset ds = load_configured_dataset(c);
  const lm::FrozenBackbone backbone = load_configured_backbone(c);
  const std::uint64_t before = backbone.checksum();
  auto report = run_training(c, c.train, ds, backbone, c.output_dir, log);
  // The file on disk must still verify and match what was trained against.
  if (lm::FrozenBackbone::load(c.backbone_path).checksum() != before) {
    throw InvariantError("backbone file changed during training");
  }
  json j = report.to_json();
  j["backbone_checksum"] = hex64(before);
  write_json(c.output_dir / "run_report.json", j);
  std::string text;
  for (const auto& s : report.seeds) {
    text += "seed " + std::to_string(s.seed) + (s.ok ? "" : " FAILED: " + s.error) + "\n";
    if (s.test) text += metrics::render_table(*s.test);
  }
  if (report.mean) text += "mean over seeds\n" + metrics::render_table(*report.mean);
  write_text(c.output_dir / "report.txt", text);
  log << text;
  if (!report.mean) throw NumericError("no seed completed training");
  return report;
}

// ---------------------------------------------------------------- eval

inline trainer::Evaluation cmd_eval(const RunConfig& c, std::ostream& log) {
  write_effective_config(c, "eval");
  require_path(c.checkpoint, "checkpoint");
  const io::Checkpoint ckpt = io::load_checkpoint(c.checkpoint, adapter::AdapterModel::kMagic);
  const adapter::AdapterModel model = adapter::AdapterModel::from_checkpoint(ckpt);
  const lm::FrozenBackbone backbone = load_configured_backbone(c);
  corpus::Dataset ds = load_configured_dataset(c);
  const json& extra = ckpt.config.at("extra");
  if (extra.contains("backbone_checksum") && extra.at("backbone_checksum").get<std::string>() != hex64(backbone.checksum())) {
    throw InputError("checkpoint was trained against backbone " + extra.at("backbone_checksum").get<std::string>() +
                     ", got " + hex64(backbone.checksum()));
  }
  if (!c.prompt && extra.contains("prompt")) ds.preset.prompt = extra.at("prompt").get<std::string>();
  const auto samples = ds.split(c.split);
  auto ev = trainer::evaluate(model, backbone, samples, ds.preset);
  {
    JsonLines lines(c.output_dir / "predictions.jsonl");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      lines.write({{"id", samples[i]->id},
                   {"gold", samples[i]->label},
                   {"generated", ev.generations[i]},
                   {"prediction", ev.predictions[i]}});
    }
  }
  write_json(c.output_dir / "eval_report.json",
             {{"split", std::string(corpus::split_name(c.split))}, {"metrics", ev.report.to_json()}});
  log << metrics::render_table(ev.report);
  return ev;
}

// ---------------------------------------------------------------- ablate

inline metrics::AblationTable cmd_ablate(const RunConfig& c, std::ostream& log) {
  write_effective_config(c, "ablate");
  const corpus::Dataset ds = load_configured_dataset(c);
  const lm::FrozenBackbone backbone = load_configured_backbone(c);
  std::map<adapter::Variant, metrics::MetricReport> means;
  json runs = json::object();
  for (adapter::Variant v : adapter::kAllVariants) {
    trainer::TrainConfig tc = c.train;
    tc.variant = v;
    const auto dir = c.output_dir / std::string(adapter::variant_name(v));
    log << "variant " << adapter::variant_label(v) << "\n";
    const auto report = run_training(c, tc, ds, backbone, dir, log);
    write_json(dir / "run_report.json", report.to_json());
    runs[std::string(adapter::variant_name(v))] = report.to_json();
    if (report.mean) means[v] = *report.mean;
  }
  const auto table = metrics::ablation_report(means);
  for (const auto& w : table.warnings) log << "warning: " << w << "\n";
  write_json(c.output_dir / "ablation.json", {{"rows", table.json}, {"warnings", table.warnings}});
  write_text(c.output_dir / "ablation.txt", table.text);
  log << table.text;
  return table;
}

// ---------------------------------------------------------------- gradcheck

inline PipelineCheckSpec gradcheck_spec(const RunConfig& c) {
  PipelineCheckSpec spec;
  spec.backbone = c.gradcheck_backbone;
  spec.adapter = c.adapter;
  spec.adapter.d_a = c.gradcheck_d_a;
  spec.adapter.d_v = c.gradcheck_d_v;
  spec.adapter.d_t = c.gradcheck_backbone.d_model;
  spec.frames = c.gradcheck_len;
  spec.seed = c.seed;
  return spec;
}

inline GradCheckReport cmd_gradcheck(const RunConfig& c, std::ostream& log) {
  write_effective_config(c, "gradcheck");
  GradCheckReport report;
  report.rows = check_primitives(c.seed, c.gradcheck_primitive_tolerance);
  const auto pipeline = check_pipeline(gradcheck_spec(c), c.gradcheck_tolerance);
  report.rows.insert(report.rows.end(), pipeline.begin(), pipeline.end());
  write_json(c.output_dir / "gradcheck.json",
             {{"passed", report.passed()},
              {"max_rel_error_primitives", report.max_rel_error(true)},
              {"max_rel_error_adapter", report.max_rel_error(false)},
              {"rows", report.to_json()}});
  log << report.render();
  char buf[160];
  std::snprintf(buf, sizeof(buf), "max relative error: primitives %.3e (tol %.0e), adapter %.3e (tol %.0e): %s\n",
                report.max_rel_error(true), c.gradcheck_primitive_tolerance, report.max_rel_error(false),
                c.gradcheck_tolerance, report.passed() ? "PASS" : "FAIL");
  log << buf;
  return report;
}

}  // namespace mse::app
