#pragma once

// Shared test helpers: conversions between library tensors and oracle
// matrices, scratch directories, and the desk-scale pipeline.

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "mse/mse.hpp"
#include "oracles.hpp"

namespace testing_support {

using mse::diffmath::ParameterSet;
using mse::diffmath::Tensor;

inline oracle::Mat to_mat(const Tensor& t) {
  return {t.rows(), t.cols(), {t.values().begin(), t.values().end()}};
}

inline Tensor to_tensor(const oracle::Mat& m) { return Tensor::matrix(m.rows, m.cols, m.v); }

inline std::vector<double> values_of(const ParameterSet& p, const std::string& name) {
  const auto v = p.values(p.index(name));
  return {v.begin(), v.end()};
}

inline oracle::Mat mat_of(const ParameterSet& p, const std::string& name) {
  const auto& s = p.shape(p.index(name));
  return {s[0], s.size() > 1 ? s[1] : 1, values_of(p, name)};
}

// Reads a backbone parameter set into the oracle's layout.
inline oracle::Transformer transformer_of(const ParameterSet& p, const mse::lm::BackboneConfig& c) {
  oracle::Transformer t;
  t.tok_emb = mat_of(p, "tok_emb");
  t.pos_emb = mat_of(p, "pos_emb");
  t.heads = c.heads;
  for (std::size_t l = 0; l < c.layers; ++l) {
    auto n = [&](const char* leaf) { return mse::lm::layer_name(l, leaf); };
    oracle::Block b;
    b.ln1_g = values_of(p, n("ln1.g"));
    b.ln1_b = values_of(p, n("ln1.b"));
    b.ln2_g = values_of(p, n("ln2.g"));
    b.ln2_b = values_of(p, n("ln2.b"));
    b.w_qkv = mat_of(p, n("attn.w_qkv"));
    b.b_qkv = values_of(p, n("attn.b_qkv"));
    b.w_o = mat_of(p, n("attn.w_o"));
    b.b_o = values_of(p, n("attn.b_o"));
    b.w_fc = mat_of(p, n("mlp.w_fc"));
    b.b_fc = values_of(p, n("mlp.b_fc"));
    b.w_proj = mat_of(p, n("mlp.w_proj"));
    b.b_proj = values_of(p, n("mlp.b_proj"));
    t.blocks.push_back(std::move(b));
  }
  t.lnf_g = values_of(p, "ln_f.g");
  t.lnf_b = values_of(p, "ln_f.b");
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// A fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mse-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

// The default desk configuration: synthetic 3-class dataset and a backbone
// pretrained on its hinted corpus, built once per process.
struct DeskPipeline {
  mse::app::RunConfig config;
  mse::corpus::Dataset dataset;
  mse::lm::PretrainResult pretrained;

  DeskPipeline() : DeskPipeline(mse::app::resolve_config("test", std::nullopt, {{"output_dir", "unused"}})) {}

  const mse::lm::FrozenBackbone& backbone() const { return pretrained.backbone; }

  mse::adapter::AdapterConfig adapter_config() const {
    mse::adapter::AdapterConfig a = config.adapter;
    a.d_a = dataset.preset.d_a;
    a.d_v = dataset.preset.d_v;
    a.d_t = backbone().width();
    return a;
  }

 private:
  explicit DeskPipeline(mse::app::RunConfig c)
      : config(std::move(c)),
        dataset(mse::corpus::generate_synthetic(config.synth).dataset),
        pretrained(pretrain(config)) {}

  static mse::lm::PretrainResult pretrain(const mse::app::RunConfig& c) {
    const auto src = mse::app::pretraining_source(c);
    const auto corpus = mse::lm::hinted_corpus(src.texts, src.prompt, src.labels,
                                               {.count = c.pretrain_corpus, .hint_width = c.adapter.n, .seed = c.seed});
    return mse::lm::pretrain_backbone(corpus, c.backbone, c.pretrain);
  }
};

inline const DeskPipeline& desk_pipeline() {
  static const DeskPipeline p;
  return p;
}

}  // namespace testing_support
