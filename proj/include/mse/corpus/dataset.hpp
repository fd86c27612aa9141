#pragma once

// Dataset directory layout:
//   preset.json        DatasetPreset of the corpus
//   manifest.jsonl     one JSON object per line:
//                        {"id", "text", "label", "audio", "vision", "split"}
//                      audio/vision are MSEF paths relative to the manifest
//   features/*.msef
//
// Text is stored as UTF-8 without escaping of non-ASCII characters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mse/corpus/feature_file.hpp"
#include "mse/corpus/presets.hpp"

namespace mse::corpus {

enum class Split { train, valid, test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw InputError("unknown split '" + std::string(s) + "'");
}

struct FeatureSample {
  std::string id;
  std::string text;
  FeatureMatrix audio;   // l_a x d_a
  FeatureMatrix vision;  // l_v x d_v
  double label = 0.0;    // score (MSA) or class id (ERC)
  Split split = Split::train;
};

struct Dataset {
  DatasetPreset preset;
  std::vector<FeatureSample> samples;

  std::vector<const FeatureSample*> split(Split s) const {
    std::vector<const FeatureSample*> out;
    for (const auto& x : samples) {
      if (x.split == s) out.push_back(&x);
    }
    return out;
  }
};

/// Shape and label checks of one sample against its preset.
inline void check_sample(const FeatureSample& s, const DatasetPreset& preset) {
  auto fail = [&](const std::string& what) { throw InputError("sample " + s.id + ": " + what); };
  if (s.audio.rows == 0 || s.vision.rows == 0) fail("empty feature sequence");
  if (s.audio.cols != preset.d_a) {
    fail("audio width " + std::to_string(s.audio.cols) + " != preset d_a " + std::to_string(preset.d_a));
  }
  if (s.vision.cols != preset.d_v) {
    fail("vision width " + std::to_string(s.vision.cols) + " != preset d_v " + std::to_string(preset.d_v));
  }
  if (!preset.label_in_range(s.label)) fail("label " + std::to_string(s.label) + " out of range for " + preset.name);
}

inline std::string manifest_line(const FeatureSample& s, std::string_view audio_path, std::string_view vision_path) {
  nlohmann::ordered_json j = {{"id", s.id},
                              {"text", s.text},
                              {"label", s.label},
                              {"audio", audio_path},
                              {"vision", vision_path},
                              {"split", split_name(s.split)}};
  return j.dump(-1, ' ', false);
}

/// Reads a manifest and every feature file it references, checking each
/// sample against the preset.
inline std::vector<FeatureSample> load_manifest(const std::filesystem::path& path, const DatasetPreset& preset) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<FeatureSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    FeatureSample s;
    std::string audio, vision;
    try {
      const auto j = nlohmann::json::parse(line);
      s.id = j.at("id").get<std::string>();
      s.text = j.at("text").get<std::string>();
      s.label = j.at("label").get<double>();
      audio = j.at("audio").get<std::string>();
      vision = j.at("vision").get<std::string>();
      s.split = parse_split(j.at("split").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    for (auto [rel, dst] : {std::pair{&audio, &s.audio}, std::pair{&vision, &s.vision}}) {
      const auto file = base / *rel;
      if (!std::filesystem::exists(file)) throw InputError("sample " + s.id + ": missing feature file " + file.string());
      *dst = read_features(file);
    }
    check_sample(s, preset);
    out.push_back(std::move(s));
  }
  return out;
}

/// Writes preset.json, manifest.jsonl and features/ under dir.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir / "features");
  {
    std::ofstream preset(dir / "preset.json", std::ios::trunc);
    preset << nlohmann::ordered_json(ds.preset.to_json()).dump(2, ' ', false) << "\n";
  }
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary | std::ios::trunc);
  if (!manifest) throw InputError("cannot write manifest in " + dir.string());
  for (const auto& s : ds.samples) {
    check_sample(s, ds.preset);
    const std::string audio = "features/" + s.id + ".audio.msef";
    const std::string vision = "features/" + s.id + ".vision.msef";
    write_features(dir / audio, s.audio);
    write_features(dir / vision, s.vision);
    manifest << manifest_line(s, audio, vision) << "\n";
  }
}

inline DatasetPreset load_preset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "preset.json");
  if (!in) throw InputError("cannot open " + (dir / "preset.json").string());
  try {
    return DatasetPreset::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw InputError((dir / "preset.json").string() + ": " + e.what());
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.preset = load_preset(dir);
  ds.samples = load_manifest(dir / "manifest.jsonl", ds.preset);
  return ds;
}

/// Keeps ceil(fraction * |train|) training samples chosen uniformly without
/// replacement (original order preserved); valid and test are untouched.
inline Dataset subsample_train(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("train fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (ds.samples[i].split == Split::train) train.push_back(i);
  }
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(train.size()) - 1e-9));
  std::vector<std::size_t> chosen;
  std::mt19937_64 rng(seed);
  std::sample(train.begin(), train.end(), std::back_inserter(chosen), keep, rng);
  std::vector<bool> selected(ds.samples.size(), false);
  for (std::size_t i : chosen) selected[i] = true;

  Dataset out;
  out.preset = ds.preset;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (ds.samples[i].split != Split::train || selected[i]) out.samples.push_back(ds.samples[i]);
  }
  return out;
}

}  // namespace mse::corpus
