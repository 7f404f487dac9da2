#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "common.hpp"
#include "metasl/optim.hpp"
#include "metasl/recognizer.hpp"
#include "metasl/selftest.hpp"

using namespace metasl;
using testing_util::random_image;
using testing_util::random_label;
using testing_util::tiny_config;

namespace {

void zero_all(ModelParams& m)
{
  for (auto& e : m.theta)
    for (auto& v : e.tensor.data())
      v = 0.0;
}

}  // namespace

TEST(Recognizer, AllParameterGroupsPassGradCheck)
{
  const auto r = check_gradients(3);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Recognizer, EncoderStepsFollowWidthAndStride)
{
  ModelConfig cfg = tiny_config();
  cfg.image_width = 16;
  cfg.column_stride = 1;
  const auto m = init_model(cfg, 1);
  std::mt19937_64 rng(1);
  const Tensor f = encode(random_image(cfg.image_height, 16, rng), m);
  EXPECT_EQ(f.shape(), (Shape{16, cfg.hidden}));
  cfg.column_stride = 4;
  const auto m4 = init_model(cfg, 1);
  EXPECT_EQ(encode(random_image(cfg.image_height, 16, rng), m4).dim(0), 4u);
}

TEST(Recognizer, BlankImageGivesIdenticalColumnWindows)
{
  const ModelConfig cfg = tiny_config();
  const Image blank(cfg.image_height, cfg.image_width);
  const Image* one = &blank;
  const Tensor x = column_windows(cfg, std::span<const Image* const>(&one, 1));
  for (std::size_t i = 1; i < x.dim(0); ++i)
    for (std::size_t j = 0; j < x.dim(1); ++j)
      EXPECT_EQ(x[i * x.dim(1) + j], x[j]);
}

TEST(Recognizer, EncoderFeaturesOfSameImageDoNotDependOnBatchmates)
{
  const ModelConfig cfg = tiny_config();
  const auto m = init_model(cfg, 5);
  std::mt19937_64 rng(2);
  const Image a = random_image(cfg.image_height, cfg.image_width, rng);
  const Image b = random_image(cfg.image_height, cfg.image_width, rng);
  const Tensor alone = encode(a, m);
  ad::Graph g;
  std::vector<const Image*> both{&b, &a};
  auto enc = encode(bind(g, m), both);
  const Tensor& f = g.value(enc.features);
  const std::size_t n = cfg.hidden;
  for (std::size_t i = 0; i < enc.steps; ++i)
    for (std::size_t j = 0; j < n; ++j)
      EXPECT_NEAR(f[(i * 2 + 1) * n + j], alone[i * n + j], 1e-14);
}

TEST(Attention, IdenticalFeaturesGiveUniformWeights)
{
  ModelConfig cfg = tiny_config();
  const auto m = init_model(cfg, 9);
  const std::size_t T = 5, n = cfg.hidden;
  Tensor feats({T, n});
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < n; ++j)
      feats[i * n + j] = 0.1 * static_cast<double>(j) - 0.2;
  ad::Graph g;
  const Bound bm = bind(g, m);
  EncodedBatch enc{g.constant(feats), {}, T, 1};
  enc.projected = g.matmul(enc.features, bm.attn_wh);
  std::mt19937_64 rng(1);
  const auto att = attend(bm, g.constant(testing_util::random_tensor({1, n}, rng)), enc);
  for (std::size_t i = 0; i < T; ++i)
    EXPECT_NEAR(g.value(att.alpha)[i], 1.0 / T, 1e-15);
  for (std::size_t j = 0; j < n; ++j)
    EXPECT_NEAR(g.value(att.context)[j], feats[j], 1e-15);
}

TEST(Attention, SaturatedScoresSelectOneStep)
{
  ModelConfig cfg = tiny_config();
  ModelParams m = init_model(cfg, 9);
  const std::size_t T = 3, n = cfg.hidden, A = cfg.attn;
  auto& wh = m.theta["attn.wh"];
  auto& ws = m.theta["attn.ws"];
  auto& v = m.theta["attn.v"];
  for (auto& x : wh.data()) x = 0.0;
  for (auto& x : ws.data()) x = 0.0;
  for (auto& x : v.data()) x = 0.0;
  wh[0 * A + 0] = 1.0;
  v[0] = 100.0;
  Tensor feats({T, n});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < T; ++i)
      feats[i * n + j] = static_cast<double>(j + 1) * (i == 0 ? 1.0 : -1.0);
  feats[0] = 10.0;
  feats[1 * n] = feats[2 * n] = -10.0;
  ad::Graph g;
  const Bound bm = bind(g, m);
  EncodedBatch enc{g.constant(feats), {}, T, 1};
  enc.projected = g.matmul(enc.features, bm.attn_wh);
  const auto att = attend(bm, g.constant(Tensor({1, n})), enc);
  EXPECT_NEAR(g.value(att.alpha)[0], 1.0, 1e-6);
  for (std::size_t j = 0; j < n; ++j)
    EXPECT_NEAR(g.value(att.context)[j], feats[j], 1e-6);
}

TEST(Attention, InvariantsOnRandomInstances)
{
  const auto st = attention_invariants(200, 7);
  EXPECT_LE(st.max_sum_error, 1e-12);
  EXPECT_GE(st.min_alpha, 0.0);
  EXPECT_LE(st.max_context_error, 1e-12);
}

TEST(Decoder, StepIsDeterministicAndSized)
{
  const ModelConfig cfg = tiny_config();
  const auto m = init_model(cfg, 4);
  std::mt19937_64 rng(4);
  const Image img = random_image(cfg.image_height, cfg.image_width, rng);
  auto run = [&] {
    ad::Graph g;
    const Bound bm = bind(g, m);
    const Image* one = &img;
    auto enc = encode(bm, std::span<const Image* const>(&one, 1));
    auto state = zero_state(g, 1, cfg.hidden);
    auto att = attend(bm, state.h, enc);
    const Token go = cfg.charset().go();
    auto out = decode_step(bm, std::span<const Token>(&go, 1), state, att.context);
    return g.value(out.logits);
  };
  const Tensor a = run(), b = run();
  EXPECT_EQ(a.shape(), (Shape{1, cfg.glyphs + 3}));
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(SequenceLoss, UniformLogitsGiveTLogK)
{
  const ModelConfig cfg = tiny_config();
  ModelParams m = init_model(cfg, 2);
  for (auto& v : m.theta["out.w"].data()) v = 0.0;
  for (auto& v : m.theta["out.b"].data()) v = 0.0;
  std::mt19937_64 rng(5);
  const Image img = random_image(cfg.image_height, cfg.image_width, rng);
  for (std::size_t len = 1; len <= cfg.max_label(); ++len) {
    const TokenSeq label = random_label(len, cfg.glyphs, rng);
    const double T = static_cast<double>(len + 1);  // glyphs plus EOS
    EXPECT_NEAR(sequence_loss(img, label, m), T * std::log(static_cast<double>(cfg.vocab())), 1e-12);
  }
}

TEST(SequenceLoss, BatchLossIsMeanOfSampleLosses)
{
  const ModelConfig cfg = tiny_config();
  const auto m = init_model(cfg, 6);
  std::mt19937_64 rng(6);
  std::vector<Image> imgs;
  std::vector<TokenSeq> labels;
  for (std::size_t len : {1u, 3u, 2u}) {
    imgs.push_back(random_image(cfg.image_height, cfg.image_width, rng));
    labels.push_back(random_label(len, cfg.glyphs, rng));
  }
  std::vector<SampleRef> refs;
  double mean = 0.0;
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    refs.push_back({&imgs[i], &labels[i]});
    mean += sequence_loss(imgs[i], labels[i], m) / 3.0;
  }
  EXPECT_NEAR(batch_loss(m, refs), mean, 1e-12);
}

TEST(SequenceLoss, RejectsBadLabelsAndImages)
{
  const ModelConfig cfg = tiny_config();
  const auto m = init_model(cfg, 1);
  const Image img(cfg.image_height, cfg.image_width);
  EXPECT_THROW(sequence_loss(img, TokenSeq{}, m), std::invalid_argument);
  EXPECT_THROW(sequence_loss(img, TokenSeq(cfg.max_steps, 0), m), std::invalid_argument);
  EXPECT_THROW(sequence_loss(img, TokenSeq{static_cast<Token>(cfg.glyphs)}, m), std::invalid_argument);
  EXPECT_THROW(sequence_loss(Image(cfg.image_height, cfg.image_width + 1), TokenSeq{0}, m), std::invalid_argument);
}

// Decoder wired by hand: GO lights hidden unit 0 which votes for glyph 0,
// glyph 0 lights unit 1 which votes for EOS; each vote has probability 0.9.
TEST(GreedyDecode, ConfidenceIsProductOfStepMaxima)
{
  const ModelConfig cfg = tiny_config();
  ModelParams m = init_model(cfg, 1);
  zero_all(m);
  const std::size_t n = cfg.hidden, V = cfg.vocab();
  const Charset cs = cfg.charset();
  auto& b = m.theta["dec.b"];
  for (std::size_t j = 0; j < n; ++j) {
    b[j] = 50.0;          // input gate open
    b[n + j] = -50.0;     // forget gate closed
    b[2 * n + j] = 50.0;  // output gate open
  }
  auto& w = m.theta["dec.w"];
  w[0 * 4 * n + 3 * n + 0] = 10.0;
  w[1 * 4 * n + 3 * n + 1] = 10.0;
  auto& emb = m.theta["embed"];
  emb[static_cast<std::size_t>(cs.go()) * cfg.embed + 0] = 1.0;
  emb[0 * cfg.embed + 1] = 1.0;
  const double h = std::tanh(std::tanh(10.0));
  const double z = std::log(0.9 / 0.1 * static_cast<double>(V - 1));
  auto& ow = m.theta["out.w"];
  ow[0 * V + 0] = z / h;
  ow[1 * V + static_cast<std::size_t>(cs.eos())] = z / h;

  const Image img(cfg.image_height, cfg.image_width);
  const auto d = greedy_decode(img, m, cfg.max_steps);
  EXPECT_EQ(d.label, (TokenSeq{0}));
  EXPECT_NEAR(d.confidence, 0.81, 1e-12);
  const auto dm = greedy_decode(img, m, cfg.max_steps, ConfidenceMode::Min);
  EXPECT_NEAR(dm.confidence, 0.9, 1e-12);
}

TEST(GreedyDecode, ImmediateEosGivesEmptyLabel)
{
  const ModelConfig cfg = tiny_config();
  ModelParams m = init_model(cfg, 1);
  for (auto& v : m.theta["out.w"].data()) v = 0.0;
  auto& ob = m.theta["out.b"];
  for (auto& v : ob.data()) v = 0.0;
  const double z = std::log(0.9 / 0.1 * static_cast<double>(cfg.vocab() - 1));
  ob[static_cast<std::size_t>(cfg.charset().eos())] = z;
  const auto d = greedy_decode(Image(cfg.image_height, cfg.image_width), m, cfg.max_steps);
  EXPECT_TRUE(d.label.empty());
  EXPECT_NEAR(d.confidence, 0.9, 1e-12);
}

TEST(GreedyDecode, StopsAtMaxSteps)
{
  const ModelConfig cfg = tiny_config();
  ModelParams m = init_model(cfg, 1);
  for (auto& v : m.theta["out.w"].data()) v = 0.0;
  for (auto& v : m.theta["out.b"].data()) v = 0.0;
  m.theta["out.b"][2] = 1.0;
  const auto d = greedy_decode(Image(cfg.image_height, cfg.image_width), m, cfg.max_steps);
  EXPECT_EQ(d.label, TokenSeq(cfg.max_steps, 2));
  EXPECT_GT(d.confidence, 0.0);
  EXPECT_LE(d.confidence, 1.0);
}

TEST(GreedyDecode, OverfitOneSampleRecoversLabel)
{
  const ModelConfig cfg = tiny_config();
  ModelParams m = init_model(cfg, 12);
  std::mt19937_64 rng(12);
  const Image img = random_image(cfg.image_height, cfg.image_width, rng);
  const TokenSeq label{2, 0, 3};
  const SampleRef ref{&img, &label};
  auto opt = OptimizerState::adam(2e-2);
  double loss = 1e9;
  for (int it = 0; it < 3000 && loss >= 1e-3; ++it) {
    loss = loss_and_grad(m, std::span<const SampleRef>(&ref, 1));
    apply_update(m.theta, m.theta.gradients(), opt);
  }
  ASSERT_LT(sequence_loss(img, label, m), 1e-3);
  EXPECT_EQ(greedy_decode(img, m, cfg.max_steps).label, label);
}

TEST(SequenceAccuracy, Examples)
{
  const std::vector<TokenSeq> a{{1, 2}, {3}, {4, 4}, {0}};
  EXPECT_DOUBLE_EQ(sequence_accuracy(a, a), 1.0);
  EXPECT_DOUBLE_EQ(sequence_accuracy(a, {{2}, {1}, {4}, {1}}), 0.0);
  EXPECT_DOUBLE_EQ(sequence_accuracy(a, {{1, 2}, {3}, {4, 4}, {1}}), 0.75);
  EXPECT_THROW(sequence_accuracy(a, {{1}}), std::invalid_argument);
}
