#include <gtest/gtest.h>

#include <random>

#include "mse/lm/backbone.hpp"
#include "mse/lm/pretrain.hpp"
#include "mse/lm/vocabulary.hpp"
#include "mse/trainer/loss.hpp"
#include "support.hpp"

namespace {

using namespace mse;
using namespace mse::lm;
using diffmath::Tensor;
using testing_support::max_abs_diff;

std::vector<double> row_values(const Tensor& t, std::size_t r) {
  return {t.values().begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
          t.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())};
}

FrozenBackbone small_backbone(std::uint64_t seed = 3, BackboneConfig cfg = {8, 2, 2, 2, 32}, double stddev = 0.3) {
  return FrozenBackbone::freeze(cfg, init_backbone(cfg, seed, stddev));
}

TEST(Vocabulary, SpecialIds) {
  EXPECT_EQ(kVocabSize, 259);
  EXPECT_EQ(kBos, 256);
  EXPECT_EQ(kEos, 257);
  EXPECT_EQ(kPad, 258);
}

TEST(Tokenize, EmptyAndByteIds) {
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("+0.0"), (std::vector<int>{'+', '0', '.', '0'}));
  EXPECT_EQ(tokenize("\xc3\xa9"), (std::vector<int>{0xc3, 0xa9}));
}

TEST(Tokenize, RoundTripOnRandomUtf8) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::uint32_t> cp(1, 0x10FFFF);
  std::uniform_int_distribution<int> len(0, 24);
  for (int trial = 0; trial < 1000; ++trial) {
    std::string s;
    for (int i = len(rng); i > 0; --i) {
      std::uint32_t c = cp(rng);
      if (c >= 0xD800 && c <= 0xDFFF) c = 'x';
      if (c < 0x80) {
        s += static_cast<char>(c);
      } else if (c < 0x800) {
        s += static_cast<char>(0xC0 | (c >> 6));
        s += static_cast<char>(0x80 | (c & 0x3F));
      } else if (c < 0x10000) {
        s += static_cast<char>(0xE0 | (c >> 12));
        s += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
        s += static_cast<char>(0x80 | (c & 0x3F));
      } else {
        s += static_cast<char>(0xF0 | (c >> 18));
        s += static_cast<char>(0x80 | ((c >> 12) & 0x3F));
        s += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
        s += static_cast<char>(0x80 | (c & 0x3F));
      }
    }
    ASSERT_EQ(detokenize(tokenize(s)), s);
  }
}

TEST(Tokenize, DetokenizeDropsSpecialIds) {
  const std::vector<int> ids = {kBos, 'h', 'i', kEos, kPad};
  EXPECT_EQ(detokenize(ids), "hi");
}

TEST(EmbedText, RowsAreTableRows) {
  const auto b = small_backbone();
  const auto table = b.to_checkpoint().tensors.front();
  ASSERT_EQ(table.name, "tok_emb");
  const int one[] = {65};
  const Tensor e = b.embed_text(one);
  EXPECT_EQ(e.shape(), (diffmath::Shape{1, 8}));
  EXPECT_EQ(row_values(e, 0), std::vector<double>(table.values.begin() + 65 * 8, table.values.begin() + 66 * 8));
  const int twice[] = {7, 7};
  const Tensor r = b.embed_text(twice);
  EXPECT_EQ(row_values(r, 0), row_values(r, 1));
  const int bad[] = {kVocabSize};
  EXPECT_THROW(b.embed_text(bad), IndexError);
}

TEST(EmbedText, NoGradientReachesTheFrozenTable) {
  const auto b = small_backbone();
  diffmath::Tape tape;
  const Tensor pseudo = tape.leaf({2, 8}, std::vector<double>(16, 0.1));
  const auto text = tokenize("ab");
  const auto prompt = tokenize(":");
  const auto label = tokenize("1");
  const AssembledInput in = b.assemble_input(pseudo, text, prompt, std::span<const int>(label));
  const Tensor loss = trainer::label_loss(b.forward_logits(in), in.label_positions, label);
  diffmath::backward(loss);
  EXPECT_TRUE(pseudo.has_grad());
  EXPECT_FALSE(b.embed_text(text).requires_grad());
  EXPECT_NO_THROW(b.verify());
}

TEST(ForwardLogits, CausalityUnderSuffixPerturbation) {
  const auto b = small_backbone();
  const auto ids = tokenize("causal check");
  const auto logits = b.forward_logits(b.assemble_input({}, ids, {}));
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    auto changed = ids;
    for (std::size_t k = t + 1; k < changed.size(); ++k) changed[k] = (changed[k] * 7 + 3) % 256;
    const auto other = b.forward_logits(b.assemble_input({}, changed, {}));
    for (std::size_t r = 0; r <= t; ++r) ASSERT_EQ(row_values(logits, r), row_values(other, r)) << t << " " << r;
  }
}

TEST(ForwardLogits, Deterministic) {
  const auto b = small_backbone();
  const auto ids = tokenize("same input");
  const auto in = b.assemble_input({}, ids, {});
  const Tensor a = b.forward_logits(in);
  const Tensor c = b.forward_logits(in);
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), c.values().begin()));
}

TEST(ForwardLogits, MatchesStepByStepAttentionOracle) {
  for (const BackboneConfig cfg : {BackboneConfig{4, 1, 1, 4, 16}, BackboneConfig{8, 2, 2, 2, 16}}) {
    const auto params = init_backbone(cfg, 17, 0.5);
    const auto b = FrozenBackbone::freeze(cfg, params);
    const auto ids = tokenize("oracle!");
    const Tensor got = b.forward_logits(b.assemble_input({}, ids, {}));
    const auto t = testing_support::transformer_of(params, cfg);
    const auto input = testing_support::to_mat(b.embed_text(ids));
    EXPECT_LE(max_abs_diff(got.values(), oracle::transformer_logits(t, input).v), 1e-10) << cfg.d_model;
  }
}

TEST(ForwardLogits, OverlengthIsLengthError) {
  const auto b = small_backbone(3, {8, 1, 2, 2, 4});
  const auto ids = tokenize("12345");
  EXPECT_THROW(b.forward_logits(b.assemble_input({}, ids, {})), LengthError);
}

TEST(AssembleInput, TextAloneWhenNoPseudoTokensOrPrompt) {
  const auto b = small_backbone();
  const auto ids = tokenize("text");
  const AssembledInput in = b.assemble_input({}, ids, {});
  EXPECT_EQ(in.length(), 4u);
  EXPECT_EQ(in.pseudo_end, 0u);
  EXPECT_EQ(in.text_end, 4u);
  EXPECT_EQ(in.prompt_end, 4u);
  EXPECT_TRUE(std::equal(in.embedded.values().begin(), in.embedded.values().end(), b.embed_text(ids).values().begin()));
}

TEST(AssembleInput, SegmentArithmeticAndRoundTrip) {
  const auto b = small_backbone();
  std::mt19937_64 rng(2);
  const Tensor pseudo = Tensor::matrix(4, 8, oracle::random_vector(rng, 32));
  const auto text = tokenize("seven!!");
  const auto prompt = tokenize("Sco:>");
  const auto label = tokenize("+1.0");
  const AssembledInput in = b.assemble_input(pseudo, text, prompt, std::span<const int>(label));
  EXPECT_EQ(in.length(), 20u);
  EXPECT_EQ(in.label_positions, (std::vector<std::size_t>{16, 17, 18, 19}));
  auto slice = [&](std::size_t from, std::size_t to) { return diffmath::slice_rows(in.embedded, from, to - from); };
  auto same = [](const Tensor& x, const Tensor& y) {
    return std::equal(x.values().begin(), x.values().end(), y.values().begin(), y.values().end());
  };
  EXPECT_TRUE(same(slice(0, in.pseudo_end), pseudo));
  EXPECT_TRUE(same(slice(in.pseudo_end, in.text_end), b.embed_text(text)));
  EXPECT_TRUE(same(slice(in.text_end, in.prompt_end), b.embed_text(prompt)));
  EXPECT_TRUE(same(slice(in.prompt_end, in.length()), b.embed_text(label)));
}

TEST(AssembleInput, WidthMismatchIsDimensionError) {
  const auto b = small_backbone();
  const auto text = tokenize("x");
  EXPECT_THROW(b.assemble_input(Tensor::zeros({2, 7}), text, {}), DimensionError);
}

TEST(LabelLogits, AreThePredictingRowsOfTheFullLogits) {
  const auto b = small_backbone();
  const auto text = tokenize("abc");
  const auto prompt = tokenize(":");
  const auto label = tokenize("+2.0");
  const AssembledInput in = b.assemble_input({}, text, prompt, std::span<const int>(label));
  const Tensor all = b.forward_logits(in);
  const Tensor block = b.label_logits(in);
  ASSERT_EQ(block.rows(), label.size());
  for (std::size_t k = 0; k < label.size(); ++k) {
    EXPECT_LE(max_abs_diff(row_values(block, k), row_values(all, in.label_positions[k] - 1)), 1e-12);
  }
  EXPECT_THROW(b.label_logits(b.assemble_input({}, text, prompt)), StateError);
}

TEST(Generate, ZeroBudgetGivesEmptyString) {
  const auto b = small_backbone();
  const auto ids = tokenize("hello");
  EXPECT_EQ(b.generate(b.assemble_input({}, ids, {}), 0), "");
}

TEST(Generate, DeterministicAcrossRuns) {
  const auto b = small_backbone();
  const auto ids = tokenize("hello");
  const auto in = b.assemble_input({}, ids, {});
  EXPECT_EQ(b.generate(in, 6), b.generate(in, 6));
}

TEST(Generate, MemorizedLabelIsReproduced) {
  const std::vector<std::string> corpus = {"the cat sat Score: +1.0", "a dog ran Score: +1.0",
                                           "birds fly Score: +1.0"};
  PretrainOptions opt;
  opt.steps = 300;
  opt.batch_size = 3;
  const auto r = pretrain_backbone(corpus, {16, 1, 2, 2, 32}, opt);
  const auto text = tokenize("a dog ran");
  const auto prompt = tokenize(" Score: ");
  EXPECT_EQ(r.backbone.generate(r.backbone.assemble_input({}, text, prompt), 8), "+1.0");
}

TEST(Pretrain, ZeroStepsKeepsSeededInitialization) {
  const BackboneConfig cfg{8, 1, 2, 2, 16};
  PretrainOptions opt;
  opt.steps = 0;
  opt.seed = 77;
  const auto r = pretrain_backbone({"abc"}, cfg, opt);
  EXPECT_TRUE(r.losses.empty());
  EXPECT_EQ(r.backbone.checksum(), FrozenBackbone::freeze(cfg, init_backbone(cfg, 77)).checksum());
}

TEST(Pretrain, LossHalvesOnThreeStrings) {
  PretrainOptions opt;
  opt.steps = 500;
  opt.batch_size = 3;
  const auto r = pretrain_backbone({"first string", "second one", "third: +0.5"}, {16, 1, 2, 2, 32}, opt);
  ASSERT_EQ(r.losses.size(), 500u);
  auto mean = [](auto first, auto last) { return std::accumulate(first, last, 0.0) / std::distance(first, last); };
  const double start = mean(r.losses.begin(), r.losses.begin() + 10);
  const double end = mean(r.losses.end() - 10, r.losses.end());
  EXPECT_LT(end, 0.5 * start) << start << " -> " << end;
}

TEST(Pretrain, SameSeedSameChecksum) {
  PretrainOptions opt;
  opt.steps = 20;
  const BackboneConfig cfg{8, 1, 2, 2, 32};
  EXPECT_EQ(pretrain_backbone({"x: 1", "y: 2"}, cfg, opt).backbone.checksum(),
            pretrain_backbone({"x: 1", "y: 2"}, cfg, opt).backbone.checksum());
}

TEST(Pretrain, EmptyCorpusIsInputError) {
  EXPECT_THROW(pretrain_backbone({}, {8, 1, 2, 2, 16}, {}), InputError);
}

TEST(HintedCorpus, MarkerMatchesLabel) {
  const auto corpus = hinted_corpus({"t1", "t2"}, " P:", {"0", "1", "2"}, {.count = 50, .hint_width = 3, .seed = 4});
  ASSERT_EQ(corpus.size(), 50u);
  for (const auto& s : corpus) {
    const char marker = s[0];
    EXPECT_EQ(s.substr(0, 3), std::string(3, marker));
    EXPECT_EQ(s.back(), marker) << s;
  }
}

TEST(HintedCorpus, RejectsEmptyInputsAndTooManyLabels) {
  EXPECT_THROW(hinted_corpus({}, ":", {"0"}, {}), InputError);
  EXPECT_THROW(hinted_corpus({"t"}, ":", {}, {}), InputError);
  std::vector<std::string> many(kHintAlphabet.size() + 1, "x");
  EXPECT_THROW(hinted_corpus({"t"}, ":", many, {}), InputError);
}

TEST(FrozenBackbone, ChecksumIsStable) {
  const auto b = small_backbone();
  EXPECT_EQ(b.recompute_checksum(), b.checksum());
  EXPECT_NE(small_backbone(4).checksum(), b.checksum());
}

}  // namespace
