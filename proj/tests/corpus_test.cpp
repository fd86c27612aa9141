#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "mse/corpus/dataset.hpp"
#include "mse/corpus/synthetic.hpp"
#include "support.hpp"

namespace {

using namespace mse;
using namespace mse::corpus;
using testing_support::ScratchDir;

DatasetPreset small_preset() {
  DatasetPreset p = synthetic_preset({});
  p.d_a = 3;
  p.d_v = 2;
  return p;
}

FeatureMatrix random_features(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<float> d;
  FeatureMatrix m{rows, cols, {}};
  for (std::size_t i = 0; i < rows * cols; ++i) m.values.push_back(static_cast<double>(d(rng)));
  return m;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

TEST(Manifest, EmptyManifestGivesNoSamples) {
  ScratchDir dir("corpus");
  write_text(dir / "manifest.jsonl", "");
  EXPECT_TRUE(load_manifest(dir / "manifest.jsonl", small_preset()).empty());
  write_text(dir / "manifest.jsonl", "\n  \n");
  EXPECT_TRUE(load_manifest(dir / "manifest.jsonl", small_preset()).empty());
}

TEST(Manifest, WidthMismatchNamesTheSample) {
  ScratchDir dir("corpus");
  std::mt19937_64 rng(1);
  std::filesystem::create_directories(dir / "features");
  write_features(dir / "features/a.msef", random_features(rng, 4, 5));
  write_features(dir / "features/v.msef", random_features(rng, 4, 2));
  FeatureSample s;
  s.id = "clip-0042";
  s.label = 1;
  write_text(dir / "manifest.jsonl", manifest_line(s, "features/a.msef", "features/v.msef") + "\n");
  try {
    load_manifest(dir / "manifest.jsonl", small_preset());
    FAIL() << "expected an input error";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("clip-0042"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("audio width 5"), std::string::npos) << e.what();
  }
}

TEST(Manifest, MissingFilesAndBadLabels) {
  ScratchDir dir("corpus");
  EXPECT_THROW(load_manifest(dir / "absent.jsonl", small_preset()), InputError);
  FeatureSample s;
  s.id = "lost";
  write_text(dir / "manifest.jsonl", manifest_line(s, "nope.msef", "nope.msef") + "\n");
  EXPECT_THROW(load_manifest(dir / "manifest.jsonl", small_preset()), InputError);
  write_text(dir / "manifest.jsonl", "{not json}\n");
  EXPECT_THROW(load_manifest(dir / "manifest.jsonl", small_preset()), InputError);

  std::mt19937_64 rng(2);
  Dataset ds{small_preset(), {}};
  ds.samples.push_back({"bad-label", "t", random_features(rng, 2, 3), random_features(rng, 2, 2), 9.0, Split::train});
  EXPECT_THROW(save_dataset(dir / "ds", ds), InputError);
}

TEST(Manifest, RoundTripOfFiftySamplesIsBitExact) {
  ScratchDir dir("corpus");
  std::mt19937_64 rng(3);
  Dataset ds{small_preset(), {}};
  std::uniform_int_distribution<std::size_t> len(1, 9);
  std::uniform_int_distribution<int> cls(0, ds.preset.num_classes - 1);
  for (int i = 0; i < 50; ++i) {
    ds.samples.push_back({"s" + std::to_string(i), "text \"" + std::to_string(i) + "\" é",
                          random_features(rng, len(rng), 3), random_features(rng, len(rng), 2),
                          static_cast<double>(cls(rng)), static_cast<Split>(i % 3)});
  }
  save_dataset(dir.path(), ds);
  const Dataset back = load_dataset(dir.path());
  EXPECT_EQ(back.preset.to_json(), ds.preset.to_json());
  ASSERT_EQ(back.samples.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& a = ds.samples[i];
    const auto& b = back.samples[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.text, b.text);
    EXPECT_EQ(a.label, b.label);
    EXPECT_EQ(a.split, b.split);
    EXPECT_EQ(a.audio, b.audio);
    EXPECT_EQ(a.vision, b.vision);
  }
}

TEST(Split, NamesRoundTrip) {
  for (Split s : {Split::train, Split::valid, Split::test}) EXPECT_EQ(parse_split(split_name(s)), s);
  EXPECT_THROW(parse_split("dev"), InputError);
}

std::vector<double> mean_frame(const FeatureMatrix& m) {
  std::vector<double> out(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) out[c] += m.values[r * m.cols + c] / static_cast<double>(m.rows);
  }
  return out;
}

// Nearest planted centroid on the concatenated mean frames.
double centroid_accuracy(const SyntheticDataset& s, int num_classes) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < s.dataset.samples.size(); ++i) {
    const auto a = mean_frame(s.dataset.samples[i].audio);
    const auto v = mean_frame(s.dataset.samples[i].vision);
    int best = -1;
    double best_d = INFINITY;
    for (int c = 0; c < num_classes; ++c) {
      const auto& ma = s.audio_means[static_cast<std::size_t>(audio_group(c))];
      const auto& mv = s.vision_means[static_cast<std::size_t>(vision_group(c))];
      double d = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - ma[k]) * (a[k] - ma[k]);
      for (std::size_t k = 0; k < v.size(); ++k) d += (v[k] - mv[k]) * (v[k] - mv[k]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    hits += best == s.classes[i];
  }
  return static_cast<double>(hits) / static_cast<double>(s.dataset.samples.size());
}

TEST(Synthetic, SameSeedGivesByteIdenticalFiles) {
  ScratchDir dir("corpus");
  SyntheticSpec spec;
  spec.train = 40;
  spec.valid = 5;
  spec.test = 5;
  save_dataset(dir / "a", generate_synthetic(spec).dataset);
  save_dataset(dir / "b", generate_synthetic(spec).dataset);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), dir / "a");
    EXPECT_EQ(io::read_file(e.path()), io::read_file(dir / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 2u + 2u * 50u);
  spec.seed += 1;
  save_dataset(dir / "c", generate_synthetic(spec).dataset);
  EXPECT_NE(io::read_file(dir / "a" / "manifest.jsonl"), io::read_file(dir / "c" / "manifest.jsonl"));
}

TEST(Synthetic, NoiselessDataIsPerfectlySeparable) {
  SyntheticSpec spec;
  spec.noise = 0.0;
  spec.num_classes = 7;
  spec.train = 300;
  const auto s = generate_synthetic(spec);
  EXPECT_EQ(centroid_accuracy(s, spec.num_classes), 1.0);
}

TEST(Synthetic, CentroidCeilingAtDefaultNoise) {
  SyntheticSpec spec;
  ASSERT_EQ(spec.noise, 0.1);
  const auto s = generate_synthetic(spec);
  EXPECT_GE(centroid_accuracy(s, spec.num_classes), 0.99);
}

TEST(Synthetic, LabelsFollowThePlantedClass) {
  SyntheticSpec spec;
  spec.task = Task::msa;
  spec.num_classes = 5;
  const auto s = generate_synthetic(spec);
  ASSERT_EQ(s.dataset.samples.size(), spec.train + spec.valid + spec.test);
  for (std::size_t i = 0; i < s.classes.size(); ++i) {
    EXPECT_EQ(s.dataset.samples[i].label, synthetic_score(s.classes[i], 5));
  }
  EXPECT_EQ(synthetic_score(0, 5), -2.0);
  EXPECT_EQ(synthetic_score(2, 5), 0.0);
  EXPECT_EQ(synthetic_score(4, 5), 2.0);
  EXPECT_EQ(s.dataset.split(Split::valid).size(), spec.valid);
}

TEST(Synthetic, EachModalityAloneMergesClasses) {
  // Classes 1 and 2 share audio, classes 0 and 1 share vision.
  EXPECT_EQ(audio_group(1), audio_group(0));
  EXPECT_NE(audio_group(1), audio_group(2));
  EXPECT_EQ(vision_group(1), vision_group(2));
  EXPECT_NE(vision_group(0), vision_group(1));
}

TEST(Synthetic, InvalidSpecIsConfigError) {
  SyntheticSpec spec;
  spec.num_classes = 1;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
  spec = {};
  spec.max_len = spec.min_len - 1;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
}

Dataset sized_dataset(std::size_t train, std::size_t valid, std::size_t test) {
  Dataset ds{small_preset(), {}};
  const std::size_t total = train + valid + test;
  ds.samples.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const Split s = i < train ? Split::train : i < train + valid ? Split::valid : Split::test;
    ds.samples.push_back({std::to_string(i), "", {1, 3, {0, 0, 0}}, {1, 2, {0, 0}}, 0.0, s});
  }
  return ds;
}

std::vector<std::string> ids(const Dataset& ds, Split s) {
  std::vector<std::string> out;
  for (const auto* x : ds.split(s)) out.push_back(x->id);
  return out;
}

TEST(SubsampleTrain, FullFractionIsIdentity) {
  const Dataset ds = sized_dataset(100, 10, 10);
  const Dataset out = subsample_train(ds, 1.0, 5);
  EXPECT_EQ(ids(out, Split::train), ids(ds, Split::train));
}

TEST(SubsampleTrain, FortyPercentOfMoseiTrain) {
  const Dataset ds = sized_dataset(16326, 3, 3);
  const Dataset out = subsample_train(ds, 0.4, 1111);
  EXPECT_EQ(out.split(Split::train).size(), 6531u);
  EXPECT_EQ(ids(out, Split::valid), ids(ds, Split::valid));
  EXPECT_EQ(ids(out, Split::test), ids(ds, Split::test));
}

TEST(SubsampleTrain, SameSeedSameSubsetAndOrderKept) {
  const Dataset ds = sized_dataset(500, 0, 0);
  const auto a = ids(subsample_train(ds, 0.2, 9), Split::train);
  EXPECT_EQ(a, ids(subsample_train(ds, 0.2, 9), Split::train));
  EXPECT_NE(a, ids(subsample_train(ds, 0.2, 10), Split::train));
  EXPECT_TRUE(std::ranges::is_sorted(a, {}, [](const std::string& s) { return std::stoi(s); }));
}

TEST(SubsampleTrain, FractionOutOfRangeIsConfigError) {
  const Dataset ds = sized_dataset(10, 0, 0);
  for (double f : {0.0, -0.1, 1.01, std::nan("")}) EXPECT_THROW(subsample_train(ds, f, 1), ConfigError) << f;
}

TEST(Presets, FeatureWidthsAndSplitSizes) {
  struct Row {
    const char* name;
    std::size_t d_a, d_v, train, valid, test;
  };
  const Row rows[] = {{"MOSEI", 74, 35, 16326, 1871, 4659},
                      {"SIMS-V2", 25, 177, 2722, 647, 1034},
                      {"MELD", 64, 64, 9989, 1109, 2610},
                      {"CHERMA", 768, 512, 17230, 5743, 5744}};
  for (const Row& r : rows) {
    const DatasetPreset p = builtin_preset(r.name);
    EXPECT_EQ(p.d_a, r.d_a) << r.name;
    EXPECT_EQ(p.d_v, r.d_v) << r.name;
    EXPECT_EQ(p.train_size, r.train) << r.name;
    EXPECT_EQ(p.valid_size, r.valid) << r.name;
    EXPECT_EQ(p.test_size, r.test) << r.name;
    EXPECT_EQ(DatasetPreset::from_json(p.to_json()).to_json(), p.to_json());
  }
  EXPECT_THROW(builtin_preset("IEMOCAP"), ConfigError);
}

TEST(Presets, LabelRanges) {
  const auto mosei = mosei_preset();
  EXPECT_TRUE(mosei.label_in_range(-3.0));
  EXPECT_FALSE(mosei.label_in_range(3.1));
  const auto sims = sims_v2_preset();
  EXPECT_TRUE(sims.label_in_range(1.0));
  EXPECT_FALSE(sims.label_in_range(-1.2));
  const auto meld = meld_preset();
  EXPECT_TRUE(meld.label_in_range(6));
  EXPECT_FALSE(meld.label_in_range(7));
  EXPECT_FALSE(meld.label_in_range(2.5));
}

}  // namespace
