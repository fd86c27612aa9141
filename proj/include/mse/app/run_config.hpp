#pragma once

// Flat run configuration shared by every subcommand. Precedence, lowest
// first: built-in defaults, the named hyperparameter preset ("hparams"), the
// config file, command-line overrides. Unknown keys are rejected.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mse/adapter/config.hpp"
#include "mse/corpus/synthetic.hpp"
#include "mse/lm/backbone.hpp"
#include "mse/lm/pretrain.hpp"
#include "mse/trainer/train.hpp"

namespace mse::app {

using json = nlohmann::ordered_json;

inline constexpr const char* kOutputRootEnv = "MSE_OUTPUT_ROOT";

struct HyperparameterPreset {
  std::string name;  // "<backbone>/<dataset>"
  std::size_t d_t;
  std::size_t h_a;
  std::size_t h_v;
  double lr;
  std::size_t n;
};

// Published adapter settings per backbone and corpus. d_t is the hidden width
// of the named backbone.
inline const std::vector<HyperparameterPreset>& hyperparameter_presets() {
  static const std::vector<HyperparameterPreset> p = {
      {"qwen-1.8b/MOSEI", 2048, 64, 32, 5e-3, 4},      {"qwen-1.8b/SIMS-V2", 2048, 64, 64, 5e-4, 4},
      {"qwen-1.8b/MELD", 2048, 32, 16, 5e-4, 2},       {"qwen-1.8b/CHERMA", 2048, 32, 16, 5e-3, 4},
      {"chatglm3-6b/MOSEI", 4096, 64, 32, 5e-5, 4},    {"chatglm3-6b/SIMS-V2", 4096, 64, 64, 5e-5, 4},
      {"chatglm3-6b/MELD", 4096, 64, 32, 5e-5, 4},     {"chatglm3-6b/CHERMA", 4096, 32, 16, 5e-5, 4},
      {"llama2-7b/MOSEI", 4096, 64, 32, 5e-5, 4},      {"llama2-7b/SIMS-V2", 4096, 64, 64, 5e-5, 4},
      {"llama2-7b/MELD", 4096, 64, 32, 5e-4, 4},       {"llama2-7b/CHERMA", 4096, 32, 16, 5e-5, 4},
  };
  return p;
}

inline const HyperparameterPreset& hyperparameter_preset(std::string_view name) {
  for (const auto& p : hyperparameter_presets()) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown hyperparameter preset '" + std::string(name) + "'");
}

/// Every key with its default. Sized for the synthetic desk setup.
inline json default_config() {
  return {
      // general
      {"seed", 1111},
      {"output_dir", ""},
      {"dataset", ""},
      {"backbone_path", ""},
      {"checkpoint", ""},
      {"split", "test"},
      {"prompt", nullptr},
      {"hparams", ""},
      // backbone
      {"d_model", 32},
      {"layers", 2},
      {"heads", 2},
      {"ffn_mult", 4},
      {"max_seq", 64},
      {"pretrain_steps", 1000},
      {"pretrain_lr", 3e-3},
      {"pretrain_batch", 8},
      {"pretrain_corpus", 600},
      // adapter
      {"h_v", 16},
      {"h_a", 16},
      {"h", 32},
      {"n", 4},
      {"k_set", {8, 16, 32}},
      // training
      {"lr", 5e-3},
      {"warmup_fraction", 0.1},
      {"epochs", 20},
      {"batch_size", 32},
      {"seeds", trainer::default_seeds()},
      {"clip_norm", 1.0},
      {"weight_decay", 0.01},
      {"variant", "full"},
      {"train_fraction", 1.0},
      // synthetic corpus
      {"synth_task", "ERC"},
      {"synth_classes", 3},
      {"synth_train", 2000},
      {"synth_valid", 200},
      {"synth_test", 500},
      {"synth_d_a", 16},
      {"synth_d_v", 16},
      {"synth_min_len", 8},
      {"synth_max_len", 16},
      {"synth_signal", 1.0},
      {"synth_noise", 0.1},
      // gradient check
      {"gradcheck_d_model", 16},
      {"gradcheck_layers", 1},
      {"gradcheck_d_a", 6},
      {"gradcheck_d_v", 6},
      {"gradcheck_len", 5},
      {"gradcheck_tolerance", 1e-4},
      {"gradcheck_primitive_tolerance", 1e-6},
  };
}

// Validated, typed view of the merged configuration.
struct RunConfig {
  json raw;

  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::filesystem::path dataset;
  std::filesystem::path backbone_path;
  std::filesystem::path checkpoint;
  corpus::Split split = corpus::Split::test;
  std::optional<std::string> prompt;

  lm::BackboneConfig backbone;
  lm::PretrainOptions pretrain;
  std::size_t pretrain_corpus = 0;

  adapter::AdapterConfig adapter;  // d_a, d_v and d_t are filled from the dataset and backbone
  trainer::TrainConfig train;
  corpus::SyntheticSpec synth;

  lm::BackboneConfig gradcheck_backbone;  // tiny random backbone for the gradient suite
  std::size_t gradcheck_d_a = 0;
  std::size_t gradcheck_d_v = 0;
  std::size_t gradcheck_len = 0;
  double gradcheck_tolerance = 0.0;
  double gradcheck_primitive_tolerance = 0.0;
};

/// Applies `overrides` onto `base`, rejecting keys the schema does not know.
inline void merge_into(json& base, const json& overrides, const std::string& origin) {
  if (!overrides.is_object()) throw ConfigError(origin + ": configuration must be a JSON object");
  for (const auto& [key, value] : overrides.items()) {
    if (!base.contains(key)) throw ConfigError(origin + ": unknown configuration key '" + key + "'");
    base[key] = value;
  }
}

inline json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Parses a command-line value: JSON if it parses, else a plain string.
inline json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return text;
  }
}

inline RunConfig finalize(json raw) {
  RunConfig c;
  try {
    raw.at("hparams").get<std::string>();
    c.seed = raw.at("seed").get<std::uint64_t>();
    c.output_dir = raw.at("output_dir").get<std::string>();
    c.dataset = raw.at("dataset").get<std::string>();
    c.backbone_path = raw.at("backbone_path").get<std::string>();
    c.checkpoint = raw.at("checkpoint").get<std::string>();
    c.split = corpus::parse_split(raw.at("split").get<std::string>());
    if (!raw.at("prompt").is_null()) c.prompt = raw.at("prompt").get<std::string>();

    c.backbone.d_model = raw.at("d_model").get<std::size_t>();
    c.backbone.layers = raw.at("layers").get<std::size_t>();
    c.backbone.heads = raw.at("heads").get<std::size_t>();
    c.backbone.ffn_mult = raw.at("ffn_mult").get<std::size_t>();
    c.backbone.max_seq = raw.at("max_seq").get<std::size_t>();
    c.pretrain.steps = raw.at("pretrain_steps").get<std::size_t>();
    c.pretrain.lr = raw.at("pretrain_lr").get<double>();
    c.pretrain.batch_size = raw.at("pretrain_batch").get<std::size_t>();
    c.pretrain.seed = c.seed;
    c.pretrain_corpus = raw.at("pretrain_corpus").get<std::size_t>();

    c.adapter.h_v = raw.at("h_v").get<std::size_t>();
    c.adapter.h_a = raw.at("h_a").get<std::size_t>();
    c.adapter.h = raw.at("h").get<std::size_t>();
    c.adapter.n = raw.at("n").get<std::size_t>();
    c.adapter.k_set = raw.at("k_set").get<std::vector<std::size_t>>();
    c.adapter.d_t = c.backbone.d_model;

    c.train.lr = raw.at("lr").get<double>();
    c.train.warmup_fraction = raw.at("warmup_fraction").get<double>();
    c.train.epochs = raw.at("epochs").get<std::size_t>();
    c.train.batch_size = raw.at("batch_size").get<std::size_t>();
    c.train.seeds = raw.at("seeds").get<std::vector<std::uint64_t>>();
    c.train.clip_norm = raw.at("clip_norm").get<double>();
    c.train.weight_decay = raw.at("weight_decay").get<double>();
    c.train.variant = adapter::parse_variant(raw.at("variant").get<std::string>());
    c.train.train_fraction = raw.at("train_fraction").get<double>();

    c.synth.task = corpus::parse_task(raw.at("synth_task").get<std::string>());
    c.synth.num_classes = raw.at("synth_classes").get<int>();
    c.synth.train = raw.at("synth_train").get<std::size_t>();
    c.synth.valid = raw.at("synth_valid").get<std::size_t>();
    c.synth.test = raw.at("synth_test").get<std::size_t>();
    c.synth.d_a = raw.at("synth_d_a").get<std::size_t>();
    c.synth.d_v = raw.at("synth_d_v").get<std::size_t>();
    c.synth.min_len = raw.at("synth_min_len").get<std::size_t>();
    c.synth.max_len = raw.at("synth_max_len").get<std::size_t>();
    c.synth.signal = raw.at("synth_signal").get<double>();
    c.synth.noise = raw.at("synth_noise").get<double>();
    c.synth.seed = c.seed;

    c.gradcheck_backbone = c.backbone;
    c.gradcheck_backbone.d_model = raw.at("gradcheck_d_model").get<std::size_t>();
    c.gradcheck_backbone.layers = raw.at("gradcheck_layers").get<std::size_t>();
    c.gradcheck_d_a = raw.at("gradcheck_d_a").get<std::size_t>();
    c.gradcheck_d_v = raw.at("gradcheck_d_v").get<std::size_t>();
    c.gradcheck_len = raw.at("gradcheck_len").get<std::size_t>();
    c.gradcheck_tolerance = raw.at("gradcheck_tolerance").get<double>();
    c.gradcheck_primitive_tolerance = raw.at("gradcheck_primitive_tolerance").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid configuration value: ") + e.what());
  }
  c.backbone.validate();
  c.gradcheck_backbone.validate();
  c.train.validate();
  c.synth.validate();
  if (c.pretrain.batch_size == 0) throw ConfigError("pretrain_batch must be positive");
  if (!(c.pretrain.lr > 0.0)) throw ConfigError("pretrain_lr must be positive");
  if (c.pretrain_corpus == 0) throw ConfigError("pretrain_corpus must be positive");
  {
    adapter::AdapterConfig probe = c.adapter;
    probe.d_a = probe.d_v = 1;
    probe.validate();
  }
  if (c.gradcheck_d_a == 0 || c.gradcheck_d_v == 0 || c.gradcheck_len == 0) {
    throw ConfigError("gradcheck extents must be positive");
  }
  c.raw = std::move(raw);
  return c;
}

/// Merges defaults, preset, file and overrides, resolves the output
/// directory and validates the result.
inline RunConfig resolve_config(const std::string& command, const std::optional<std::filesystem::path>& file,
                                const json& overrides) {
  const json defaults = default_config();
  json merged = json::object();
  // Both layers are checked against the schema before the preset is applied.
  json probe = defaults;
  if (file) {
    merged = read_config_file(*file);
    merge_into(probe, merged, file->string());
  }
  merge_into(probe, overrides, "command line");
  merged.update(overrides);

  json raw = defaults;
  const std::string hp = probe.at("hparams").is_string() ? probe.at("hparams").get<std::string>() : "";
  if (!hp.empty()) {
    const auto& p = hyperparameter_preset(hp);
    raw["d_model"] = p.d_t;
    raw["h_a"] = p.h_a;
    raw["h_v"] = p.h_v;
    raw["lr"] = p.lr;
    raw["n"] = p.n;
  }
  merge_into(raw, merged, "configuration");
  if (raw.at("output_dir").get<std::string>().empty()) {
    const char* root = std::getenv(kOutputRootEnv);
    const std::filesystem::path base = root && *root ? root : "runs";
    raw["output_dir"] = (base / command).string();
  }
  return finalize(std::move(raw));
}

inline void write_effective_config(const RunConfig& c, const std::string& command) {
  std::filesystem::create_directories(c.output_dir);
  json snapshot = {{"command", command}, {"config", c.raw}};
  std::ofstream out(c.output_dir / "effective_config.json", std::ios::trunc);
  out << snapshot.dump(2, ' ', false) << "\n";
  if (!out) throw InputError("cannot write effective config in " + c.output_dir.string());
}

}  // namespace mse::app
