#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mse/corpus/dataset.hpp"

namespace mse::corpus {

// Planted multimodal classification problem. Class c sets the mean of its
// audio frames to audio group c/2 and of its vision frames to vision group
// (c+1)/2; the transcript is drawn independently of the class. Each modality
// alone therefore merges some classes, and only audio and vision together
// identify every class.
struct SyntheticSpec {
  Task task = Task::erc;
  int num_classes = 3;
  std::size_t train = 2000;
  std::size_t valid = 200;
  std::size_t test = 500;
  std::size_t d_a = 16;
  std::size_t d_v = 16;
  std::size_t min_len = 8;
  std::size_t max_len = 16;
  double signal = 1.0;  // norm of each group mean
  double noise = 0.1;   // per-frame Gaussian stddev
  std::uint64_t seed = 7;

  void validate() const {
    if (num_classes < 2 || num_classes > 7) throw ConfigError("synthetic class count must be 2..7");
    if (train == 0) throw ConfigError("synthetic train split is empty");
    if (d_a == 0 || d_v == 0) throw ConfigError("synthetic feature widths must be positive");
    if (min_len == 0 || max_len < min_len) throw ConfigError("synthetic length range is invalid");
    if (noise < 0.0 || signal <= 0.0) throw ConfigError("synthetic signal must be positive and noise non-negative");
  }

  nlohmann::json to_json() const {
    return {{"task", std::string(task_name(task))},
            {"num_classes", num_classes},
            {"train", train},
            {"valid", valid},
            {"test", test},
            {"d_a", d_a},
            {"d_v", d_v},
            {"min_len", min_len},
            {"max_len", max_len},
            {"signal", signal},
            {"noise", noise},
            {"seed", seed}};
  }
};

inline int audio_group(int cls) { return cls / 2; }
inline int vision_group(int cls) { return (cls + 1) / 2; }

// MSA variant: class c maps to an evenly spaced score in [-2, 2] rounded to
// one decimal.
inline double synthetic_score(int cls, int num_classes) {
  const double raw = -2.0 + 4.0 * static_cast<double>(cls) / static_cast<double>(num_classes - 1);
  return std::round(raw * 10.0) / 10.0;
}

inline const std::vector<std::string>& synthetic_templates() {
  static const std::vector<std::string> t = {"the clip plays on", "a person speaks here", "someone talks now",
                                             "this is a short scene", "they say a few words", "a voice in the room"};
  return t;
}

struct SyntheticDataset {
  Dataset dataset;
  // Planted group means, [group][feature].
  std::vector<std::vector<double>> audio_means;
  std::vector<std::vector<double>> vision_means;
  std::vector<int> classes;  // class of every sample, dataset order
};

inline DatasetPreset synthetic_preset(const SyntheticSpec& spec) {
  DatasetPreset p;
  p.name = "synthetic";
  p.task = spec.task;
  p.family = spec.task == Task::msa ? MetricFamily::mosei : MetricFamily::erc;
  p.d_a = spec.d_a;
  p.d_v = spec.d_v;
  p.label_min = -3.0;
  p.label_max = 3.0;
  p.num_classes = spec.num_classes;
  p.neutral_class = 0;
  for (int c = 0; c < spec.num_classes; ++c) p.class_names.push_back("class" + std::to_string(c));
  p.prompt = spec.task == Task::msa ? " Score:" : " Class:";
  p.train_size = spec.train;
  p.valid_size = spec.valid;
  p.test_size = spec.test;
  return p;
}

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto make_means = [&](int groups, std::size_t dim) {
    std::vector<std::vector<double>> means(static_cast<std::size_t>(groups), std::vector<double>(dim));
    for (auto& m : means) {
      double norm = 0.0;
      for (double& v : m) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (double& v : m) v *= spec.signal / norm;
    }
    return means;
  };

  SyntheticDataset out;
  out.audio_means = make_means(audio_group(spec.num_classes - 1) + 1, spec.d_a);
  out.vision_means = make_means(vision_group(spec.num_classes - 1) + 1, spec.d_v);
  out.dataset.preset = synthetic_preset(spec);

  std::uniform_int_distribution<int> pick_class(0, spec.num_classes - 1);
  std::uniform_int_distribution<std::size_t> pick_len(spec.min_len, spec.max_len);
  std::uniform_int_distribution<std::size_t> pick_text(0, synthetic_templates().size() - 1);

  auto frames = [&](const std::vector<double>& mean) {
    FeatureMatrix m;
    m.rows = pick_len(rng);
    m.cols = mean.size();
    m.values.resize(m.rows * m.cols);
    for (std::size_t r = 0; r < m.rows; ++r) {
      for (std::size_t c = 0; c < m.cols; ++c) {
        const double x = mean[c] + spec.noise * normal(rng);
        m.values[r * m.cols + c] = static_cast<double>(static_cast<float>(x));
      }
    }
    return m;
  };

  const std::array<std::pair<Split, std::size_t>, 3> splits = {
      {{Split::train, spec.train}, {Split::valid, spec.valid}, {Split::test, spec.test}}};
  std::size_t index = 0;
  for (auto [split, count] : splits) {
    for (std::size_t i = 0; i < count; ++i, ++index) {
      const int cls = pick_class(rng);
      FeatureSample s;
      char id[32];
      std::snprintf(id, sizeof(id), "syn-%06zu", index);
      s.id = id;
      s.text = synthetic_templates()[pick_text(rng)];
      s.audio = frames(out.audio_means[static_cast<std::size_t>(audio_group(cls))]);
      s.vision = frames(out.vision_means[static_cast<std::size_t>(vision_group(cls))]);
      s.label = spec.task == Task::msa ? synthetic_score(cls, spec.num_classes) : static_cast<double>(cls);
      s.split = split;
      out.dataset.samples.push_back(std::move(s));
      out.classes.push_back(cls);
    }
  }
  return out;
}

}  // namespace mse::corpus
