// mse: command-line front end.
//
// Exit codes: 0 success, 1 invalid configuration or input, 2 runtime or
// numeric failure, 3 invariant breach.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mse/app/commands.hpp"

namespace {

using mse::app::json;

struct CommonOptions {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::string output;
  std::vector<std::string> sets;
};

// Named flags that map one-to-one onto configuration keys.
struct KeyFlag {
  const char* flag;
  const char* key;
  const char* help;
};

const std::vector<KeyFlag>& key_flags() {
  static const std::vector<KeyFlag> f = {
      {"--dataset", "dataset", "dataset directory"},
      {"--backbone", "backbone_path", "frozen backbone checkpoint"},
      {"--checkpoint", "checkpoint", "adapter checkpoint (eval)"},
      {"--split", "split", "train, valid or test (eval)"},
      {"--variant", "variant", "ablation variant"},
      {"--epochs", "epochs", "training epochs"},
      {"--lr", "lr", "peak learning rate"},
      {"--train-fraction", "train_fraction", "fraction of the training split to keep"},
      {"--hparams", "hparams", "named hyperparameter preset, e.g. qwen-1.8b/MOSEI"},
  };
  return f;
}

json collect_overrides(const CommonOptions& common, const std::vector<std::pair<std::string, std::string>>& flagged,
                       bool seed_sets_seed_list) {
  // String-typed keys keep their text verbatim; others are parsed as JSON.
  const json defaults = mse::app::default_config();
  auto value_for = [&](const std::string& key, const std::string& text) -> json {
    if (defaults.contains(key) && (defaults[key].is_string() || defaults[key].is_null())) return text;
    return mse::app::parse_override_value(text);
  };
  json o = json::object();
  for (const auto& [key, value] : flagged) o[key] = value_for(key, value);
  for (const std::string& kv : common.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw mse::ConfigError("--set expects key=value, got '" + kv + "'");
    o[kv.substr(0, eq)] = value_for(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!common.output.empty()) o["output_dir"] = common.output;
  if (common.seed) {
    o["seed"] = *common.seed;
    if (seed_sets_seed_list) o["seeds"] = json::array({*common.seed});
  }
  return o;
}

int run(const std::string& command, const CommonOptions& common,
        const std::vector<std::pair<std::string, std::string>>& flagged) {
  using namespace mse::app;
  const bool trains = command == "train" || command == "ablate";
  const std::optional<std::filesystem::path> file =
      common.config_file.empty() ? std::nullopt : std::optional<std::filesystem::path>(common.config_file);
  const RunConfig c = resolve_config(command, file, collect_overrides(common, flagged, trains));
  std::ostream& log = std::cout;
  if (command == "synth") {
    cmd_synth(c, log);
  } else if (command == "pretrain-backbone") {
    cmd_pretrain_backbone(c, log);
  } else if (command == "train") {
    cmd_train(c, log);
  } else if (command == "eval") {
    cmd_eval(c, log);
  } else if (command == "ablate") {
    cmd_ablate(c, log);
  } else if (command == "gradcheck") {
    if (!cmd_gradcheck(c, log).passed()) return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal adapter laboratory: pretrain a frozen byte-level LM, train adapters, evaluate."};
  app.require_subcommand(1);
  app.fallthrough();
  CommonOptions common;
  app.add_option("--config", common.config_file, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "global seed; for train/ablate also replaces the seed list");
  app.add_option("--output", common.output, "output directory (default $MSE_OUTPUT_ROOT/<command> or runs/<command>)");
  app.add_option("--set", common.sets, "override any configuration key: key=value (value parsed as JSON if possible)");

  struct Sub {
    std::string name;
    std::string help;
  };
  const std::vector<Sub> subs = {
      {"pretrain-backbone", "pretrain and freeze the byte-level backbone"},
      {"synth", "generate the planted synthetic dataset"},
      {"train", "train adapters for every seed and report test metrics"},
      {"eval", "evaluate an adapter checkpoint on a dataset split"},
      {"ablate", "train every ablation variant and print the ablation table"},
      {"gradcheck", "finite-difference check of primitives and adapter gradients"},
  };
  std::vector<std::vector<std::string>> flag_values(subs.size(), std::vector<std::string>(key_flags().size()));
  std::vector<CLI::App*> handles;
  for (std::size_t s = 0; s < subs.size(); ++s) {
    CLI::App* sub = app.add_subcommand(subs[s].name, subs[s].help);
    for (std::size_t k = 0; k < key_flags().size(); ++k) {
      sub->add_option(key_flags()[k].flag, flag_values[s][k], key_flags()[k].help);
    }
    handles.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (std::size_t s = 0; s < subs.size(); ++s) {
      if (!handles[s]->parsed()) continue;
      std::vector<std::pair<std::string, std::string>> flagged;
      for (std::size_t k = 0; k < key_flags().size(); ++k) {
        if (handles[s]->count(key_flags()[k].flag) > 0) flagged.emplace_back(key_flags()[k].key, flag_values[s][k]);
      }
      return run(subs[s].name, common, flagged);
    }
  } catch (const mse::InvariantError& e) {
    std::cerr << "invariant breach: " << e.what() << "\n";
    return 3;
  } catch (const mse::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const mse::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const mse::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 1;
  } catch (const mse::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
