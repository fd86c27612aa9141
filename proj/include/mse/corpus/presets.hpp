#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mse/errors.hpp"

namespace mse::corpus {

enum class Task { msa, erc };

// Which binary standard the MSA metrics use. MOSEI splits non-negative vs
// negative, SIMS-V2 positive vs non-positive.
enum class MetricFamily { mosei, sims, erc };

inline std::string_view task_name(Task t) { return t == Task::msa ? "MSA" : "ERC"; }

inline Task parse_task(std::string_view s) {
  if (s == "MSA" || s == "msa") return Task::msa;
  if (s == "ERC" || s == "erc") return Task::erc;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

inline std::string_view family_name(MetricFamily f) {
  switch (f) {
    case MetricFamily::mosei: return "mosei";
    case MetricFamily::sims: return "sims";
    case MetricFamily::erc: return "erc";
  }
  return "?";
}

inline MetricFamily parse_family(std::string_view s) {
  if (s == "mosei") return MetricFamily::mosei;
  if (s == "sims") return MetricFamily::sims;
  if (s == "erc") return MetricFamily::erc;
  throw ConfigError("unknown metric family '" + std::string(s) + "'");
}

struct DatasetPreset {
  std::string name;
  Task task = Task::msa;
  MetricFamily family = MetricFamily::mosei;
  std::size_t d_a = 0;
  std::size_t d_v = 0;
  double label_min = -3.0;  // MSA score range
  double label_max = 3.0;
  int num_classes = 7;      // ERC
  int neutral_class = 0;    // ERC fallback prediction
  std::vector<std::string> class_names;
  std::string prompt;
  std::size_t train_size = 0;
  std::size_t valid_size = 0;
  std::size_t test_size = 0;

  bool label_in_range(double label) const {
    if (task == Task::msa) return label >= label_min && label <= label_max;
    const int c = static_cast<int>(label);
    return static_cast<double>(c) == label && c >= 0 && c < num_classes;
  }

  nlohmann::json to_json() const {
    return {{"name", name},
            {"task", std::string(task_name(task))},
            {"family", std::string(family_name(family))},
            {"d_a", d_a},
            {"d_v", d_v},
            {"label_min", label_min},
            {"label_max", label_max},
            {"num_classes", num_classes},
            {"neutral_class", neutral_class},
            {"class_names", class_names},
            {"prompt", prompt},
            {"train_size", train_size},
            {"valid_size", valid_size},
            {"test_size", test_size}};
  }

  static DatasetPreset from_json(const nlohmann::json& j) {
    DatasetPreset p;
    p.name = j.at("name").get<std::string>();
    p.task = parse_task(j.at("task").get<std::string>());
    p.family = parse_family(j.at("family").get<std::string>());
    p.d_a = j.at("d_a").get<std::size_t>();
    p.d_v = j.at("d_v").get<std::size_t>();
    p.label_min = j.at("label_min").get<double>();
    p.label_max = j.at("label_max").get<double>();
    p.num_classes = j.at("num_classes").get<int>();
    p.neutral_class = j.at("neutral_class").get<int>();
    p.class_names = j.at("class_names").get<std::vector<std::string>>();
    p.prompt = j.at("prompt").get<std::string>();
    p.train_size = j.at("train_size").get<std::size_t>();
    p.valid_size = j.at("valid_size").get<std::size_t>();
    p.test_size = j.at("test_size").get<std::size_t>();
    if (p.d_a == 0 || p.d_v == 0) throw ConfigError("preset " + p.name + " has a zero feature width");
    if (p.num_classes < 1 || p.num_classes > 10) throw ConfigError("preset " + p.name + " class count out of range");
    return p;
  }
};

// Feature widths and split sizes of the four public corpora. Prompts are
// appended after the transcript; ERC prompts spell out the numeral of each
// emotion so the model answers with a single digit.
inline DatasetPreset mosei_preset() {
  return {"MOSEI", Task::msa, MetricFamily::mosei, 74, 35, -3.0, 3.0, 7, 0, {},
          " Sentiment score from -3.0 to +3.0:", 16326, 1871, 4659};
}

inline DatasetPreset sims_v2_preset() {
  return {"SIMS-V2", Task::msa, MetricFamily::sims, 25, 177, -1.0, 1.0, 7, 0, {},
          " 情感分数（-1.0到+1.0）:", 2722, 647, 1034};
}

inline DatasetPreset meld_preset() {
  return {"MELD", Task::erc, MetricFamily::erc, 64, 64, 0.0, 6.0, 7, 0,
          {"neutral", "surprise", "fear", "sadness", "joy", "disgust", "anger"},
          " Emotion 0 neutral 1 surprise 2 fear 3 sadness 4 joy 5 disgust 6 anger:", 9989, 1109, 2610};
}

inline DatasetPreset cherma_preset() {
  return {"CHERMA", Task::erc, MetricFamily::erc, 768, 512, 0.0, 6.0, 7, 0,
          {"neutrality", "surprise", "fear", "sadness", "happiness", "disgust", "anger"},
          " 情绪 0中性 1惊讶 2恐惧 3悲伤 4快乐 5厌恶 6愤怒:", 17230, 5743, 5744};
}

inline std::vector<DatasetPreset> builtin_presets() {
  return {mosei_preset(), sims_v2_preset(), meld_preset(), cherma_preset()};
}

inline DatasetPreset builtin_preset(std::string_view name) {
  for (auto& p : builtin_presets()) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown dataset preset '" + std::string(name) + "'");
}

}  // namespace mse::corpus
