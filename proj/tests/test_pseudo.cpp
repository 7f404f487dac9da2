#include <gtest/gtest.h>

#include <sstream>

#include "common.hpp"
#include "json.hpp"
#include "metasl/pseudo.hpp"
#include "metasl/selftest.hpp"

using namespace metasl;

namespace {

std::vector<UnlabeledImage> candidates(const ModelConfig& cfg, std::size_t n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::vector<UnlabeledImage> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = {i, testing_util::random_image(cfg.image_height, cfg.image_width, rng)};
  return out;
}

// Confidences chosen by hand; labels are the candidate position.
std::vector<ScoredCandidate> scored(const std::vector<double>& conf)
{
  std::vector<ScoredCandidate> out;
  for (std::size_t i = 0; i < conf.size(); ++i)
    out.push_back({i, {static_cast<Token>(i % 4)}, conf[i]});
  return out;
}

}  // namespace

TEST(Pool, TauOneIsAlwaysEmpty)
{
  const auto cfg = testing_util::tiny_config();
  const auto m = init_model(cfg, 1);
  const auto c = candidates(cfg, 30, 1);
  EXPECT_TRUE(regenerate(m, c, 1.0, 100, 0).empty());
  EXPECT_TRUE(admit(scored(std::vector<double>(30, 1.0)), c, 1.0, 100).empty());
}

TEST(Pool, TauZeroWithCapKeepsTheMostConfident)
{
  const auto cfg = testing_util::tiny_config();
  const auto c = candidates(cfg, 100, 2);
  std::vector<double> conf(100);
  for (std::size_t i = 0; i < 100; ++i)
    conf[i] = static_cast<double>((i * 37) % 100) / 100.0 + 0.001;
  const auto pool = admit(scored(conf), c, 0.0, 30);
  ASSERT_EQ(pool.size(), 30u);
  for (std::size_t k = 0; k < 30; ++k)
    EXPECT_NEAR(pool.entries[k].confidence, 1.0 - 0.01 * static_cast<double>(k) - 0.009, 1e-12);
}

TEST(Pool, EntriesCarryIndexLabelAndFlag)
{
  const auto cfg = testing_util::tiny_config();
  auto c = candidates(cfg, 3, 3);
  c[1].index = 77;
  const auto pool = admit(scored({0.5, 0.95, 0.2}), c, 0.4, 10);
  ASSERT_EQ(pool.size(), 2u);
  EXPECT_EQ(pool.entries[0].index, 77u);
  EXPECT_EQ(pool.entries[0].label, (TokenSeq{1}));
  EXPECT_TRUE(pool.entries[0].is_pseudo);
  EXPECT_EQ(pool.entries[0].image, c[1].image);
}

TEST(Pool, ThresholdIsStrict)
{
  const auto cfg = testing_util::tiny_config();
  const auto c = candidates(cfg, 2, 4);
  EXPECT_EQ(admit(scored({0.9, 0.9000001}), c, 0.9, 10).size(), 1u);
}

TEST(Pool, EmptyLabelsAreNotAdmitted)
{
  const auto cfg = testing_util::tiny_config();
  const auto c = candidates(cfg, 2, 4);
  auto s = scored({0.99, 0.95});
  s[0].label.clear();
  const auto pool = admit(s, c, 0.5, 10);
  ASSERT_EQ(pool.size(), 1u);
  EXPECT_EQ(pool.entries[0].index, 1u);
}

TEST(Pool, UnterminatedDecodesAreNotAdmitted)
{
  const auto cfg = testing_util::tiny_config();
  const auto c = candidates(cfg, 2, 4);
  auto s = scored({0.99, 0.95});
  s[0].terminated = false;
  const auto pool = admit(s, c, 0.5, 10);
  ASSERT_EQ(pool.size(), 1u);
  EXPECT_EQ(pool.entries[0].index, 1u);

  // A decoder that never emits EOS fills every step; nothing it says is admitted.
  ModelParams m = init_model(cfg, 1);
  for (auto& v : m.theta["out.w"].data()) v = 0.0;
  for (auto& v : m.theta["out.b"].data()) v = 0.0;
  m.theta["out.b"][2] = 50.0;
  const auto sc = score_candidates(m, c, 0, 0);
  ASSERT_EQ(sc.size(), 2u);
  EXPECT_EQ(sc[0].label.size(), cfg.max_steps);
  EXPECT_FALSE(sc[0].terminated);
  EXPECT_GT(sc[0].confidence, 0.99);
  EXPECT_TRUE(regenerate(m, c, 0.0, 10, 0).empty());
}

TEST(Pool, InvalidTauRejected)
{
  const auto cfg = testing_util::tiny_config();
  const auto c = candidates(cfg, 2, 4);
  EXPECT_THROW(admit(scored({0.5, 0.5}), c, 1.5, 1), std::invalid_argument);
  EXPECT_THROW(regenerate(init_model(cfg, 1), c, -0.1, 1, 0), std::invalid_argument);
}

TEST(Pool, LawsOverRandomFixtures)
{
  const auto st = pool_laws(100, 3);
  EXPECT_EQ(st.fixtures, 100u);
  EXPECT_EQ(st.monotone_violations, 0u);
  EXPECT_EQ(st.cap_violations, 0u);
  EXPECT_EQ(st.nonempty_at_one, 0u);
  EXPECT_GT(st.nontrivial, 20u);
}

TEST(Pool, UntrainedModelAdmitsAlmostNothing)
{
  ModelConfig cfg = testing_util::tiny_config();
  cfg.max_steps = 6;
  const auto m = init_model(cfg, 8);
  const auto c = candidates(cfg, 200, 8);
  EXPECT_LE(regenerate(m, c, 0.9, 500, 0).size(), 4u);
}

TEST(Pool, BudgetDecodesASeededSubsample)
{
  const auto cfg = testing_util::tiny_config();
  const auto m = init_model(cfg, 1);
  const auto c = candidates(cfg, 50, 5);
  const auto a = score_candidates(m, c, 10, 7);
  const auto b = score_candidates(m, c, 10, 7);
  ASSERT_EQ(a.size(), 10u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].position, b[i].position);
    if (i) {
      EXPECT_LT(a[i - 1].position, a[i].position);
    }
  }
  EXPECT_EQ(score_candidates(m, c, 0, 7).size(), 50u);
}

TEST(Measure, CopiedTruthScoresOne)
{
  const auto cfg = testing_util::tiny_config();
  const auto c = candidates(cfg, 4, 6);
  const auto pool = admit(scored({0.5, 0.6, 0.7, 0.8}), c, 0.0, 10);
  std::vector<TokenSeq> truth;
  for (std::size_t i = 0; i < 4; ++i)
    truth.push_back({static_cast<Token>(i % 4)});
  const auto h = HiddenTruth::from_labels(truth);
  const auto pm = measure(pool, h, 12);
  EXPECT_EQ(pm.count, 4u);
  EXPECT_DOUBLE_EQ(pm.accuracy, 1.0);
  EXPECT_FALSE(pm.vacuous);
  EXPECT_EQ(pm.iteration, 12u);
  EXPECT_EQ(h.reads(), 4u);
}

TEST(Measure, PartialAccuracy)
{
  const auto cfg = testing_util::tiny_config();
  const auto c = candidates(cfg, 4, 6);
  const auto pool = admit(scored({0.5, 0.6, 0.7, 0.8}), c, 0.0, 10);
  const auto h = HiddenTruth::from_labels({{0}, {3}, {2}, {0}});
  EXPECT_DOUBLE_EQ(measure(pool, h).accuracy, 0.5);
}

TEST(Measure, EmptyPoolIsVacuous)
{
  const auto pm = measure(PseudoPool{}, HiddenTruth{});
  EXPECT_EQ(pm.count, 0u);
  EXPECT_DOUBLE_EQ(pm.accuracy, 1.0);
  EXPECT_TRUE(pm.vacuous);
}

TEST(Measure, UnknownIndexThrows)
{
  const auto cfg = testing_util::tiny_config();
  auto c = candidates(cfg, 1, 6);
  c[0].index = 9;
  const auto pool = admit(scored({0.5}), c, 0.0, 10);
  EXPECT_THROW(measure(pool, HiddenTruth::from_labels({{0}})), std::out_of_range);
}

TEST(Pool, DefaultThresholds)
{
  EXPECT_DOUBLE_EQ(default_tau(DomainName::PlateLike), 0.9);
  EXPECT_DOUBLE_EQ(default_tau(DomainName::HandwrittenLike), 0.98);
}

TEST(ExportJsonl, OneObjectPerEntry)
{
  const auto cfg = testing_util::tiny_config();
  const auto c = candidates(cfg, 3, 7);
  const auto pool = admit(scored({0.5, 0.6, 0.7}), c, 0.0, 10);
  const auto h = HiddenTruth::from_labels({{0}, {0}, {2}});
  std::ostringstream os;
  export_jsonl(pool, os, &h);
  std::istringstream is(os.str());
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(is, line))
    rows.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0]["index"], 2);
  EXPECT_EQ(rows[0]["pseudo_label"], nlohmann::json::array({2}));
  EXPECT_EQ(rows[0]["correct"], true);
  EXPECT_EQ(rows[1]["correct"], false);
  std::ostringstream bare;
  export_jsonl(pool, bare);
  EXPECT_EQ(bare.str().find("correct"), std::string::npos);
}
