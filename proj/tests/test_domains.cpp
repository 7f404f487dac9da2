#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <type_traits>

#include "metasl/domains.hpp"
#include "metasl/meta.hpp"

using namespace metasl;

namespace {

DomainSpec clean_spec()
{
  DomainSpec s;
  s.length = LengthPolicy::uniform(1, 10);
  return s;
}

}  // namespace

TEST(Render, CleanSpecIsExactGlyphConcatenation)
{
  const GlyphWorld world;
  const TokenSeq label{3, 0, 15, 7};
  const Image img = render(label, clean_spec(), 9, world);
  const std::size_t G = world.glyph_size();
  ASSERT_EQ(img.height, G);
  ASSERT_EQ(img.width, G * world.max_len());
  for (std::size_t r = 0; r < G; ++r)
    for (std::size_t q = 0; q < img.width; ++q) {
      const std::size_t k = q / G;
      const double expect = k < label.size() ? world.bitmap(label[k]).at(r, q % G) : 0.0;
      EXPECT_EQ(img.at(r, q), expect) << r << "," << q;
    }
}

TEST(Render, SameInputsAreBitIdentical)
{
  const GlyphWorld world;
  for (auto d : kAllDomains) {
    const auto spec = default_spec(d);
    const TokenSeq label{1, 2, 3, 4, 5, 6, 7};
    EXPECT_EQ(render(label, spec, 42, world), render(label, spec, 42, world)) << domain_key(d);
  }
}

TEST(Render, NoiseMeanAbsoluteDifferenceInRange)
{
  const GlyphWorld world;
  DomainSpec noisy = clean_spec();
  noisy.corruption.noise_std = 0.1;
  const TokenSeq label{4, 9, 1, 12, 0};
  const Image clean = render(label, clean_spec(), 0, world);
  double mad = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Image img = render(label, noisy, seed, world);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      mad += std::abs(img.pixels[i] - clean.pixels[i]);
  }
  mad /= 100.0 * static_cast<double>(clean.pixels.size());
  EXPECT_GT(mad, 0.0);
  EXPECT_LT(mad, 0.2);
}

TEST(Render, PixelsStayInUnitInterval)
{
  const GlyphWorld world;
  for (auto d : kAllDomains)
    for (std::uint64_t s = 0; s < 20; ++s)
      for (double p : render({1, 2, 3}, default_spec(d), s, world).pixels) {
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
      }
}

TEST(Render, RejectsInvalidInput)
{
  const GlyphWorld world;
  EXPECT_THROW(render({}, clean_spec(), 0, world), std::invalid_argument);
  EXPECT_THROW(render(TokenSeq(11, 0), clean_spec(), 0, world), std::invalid_argument);
  EXPECT_THROW(render({16}, clean_spec(), 0, world), std::invalid_argument);
  DomainSpec bad = clean_spec();
  bad.corruption.dropout_rate = 1.5;
  EXPECT_THROW(render({1}, bad, 0, world), std::invalid_argument);
}

TEST(GlyphWorld, BitmapsAreDistinct)
{
  const GlyphWorld world;
  for (int a = 0; a < 16; ++a)
    for (int b = a + 1; b < 16; ++b)
      EXPECT_NE(world.bitmap(a), world.bitmap(b));
}

TEST(GenerateDomain, PlateLabelsHaveSevenTokens)
{
  const GlyphWorld world;
  const auto ds = generate_domain(default_spec(DomainName::PlateLike), 200, 3, world);
  std::size_t first_region = 0;
  for (const auto* split : {&ds.train, &ds.test})
    for (const auto& s : *split) {
      EXPECT_EQ(s.label.size(), 7u);
      EXPECT_LT(s.label[0], static_cast<Token>(kPlateRegions));
      first_region += s.label[0] == 0;
    }
  // One region dominates.
  EXPECT_GT(first_region, 80u);
}

TEST(GenerateDomain, DocumentLabelsHaveTenTokens)
{
  const GlyphWorld world;
  const auto ds = generate_domain(default_spec(DomainName::DocumentLike), 150, 3, world);
  for (const auto& s : ds.train)
    EXPECT_EQ(s.label.size(), 10u);
}

TEST(GenerateDomain, LengthPolicies)
{
  const GlyphWorld world;
  const auto syn = generate_domain(default_spec(DomainName::SyntheticLike), 300, 3, world);
  std::set<std::size_t> lengths;
  for (const auto& s : syn.train) {
    EXPECT_GE(s.label.size(), 4u);
    EXPECT_LE(s.label.size(), 10u);
    lengths.insert(s.label.size());
  }
  EXPECT_EQ(lengths.size(), 7u);
}

TEST(GenerateDomain, NineToOneSplit)
{
  const GlyphWorld world;
  const auto ds = generate_domain(default_spec(DomainName::StreetLike), 100, 1, world);
  EXPECT_EQ(ds.train.size(), 90u);
  EXPECT_EQ(ds.test.size(), 10u);
  EXPECT_THROW(generate_domain(default_spec(DomainName::StreetLike), 5, 1, world), std::invalid_argument);
}

TEST(GenerateDomain, Deterministic)
{
  const GlyphWorld world;
  const auto a = generate_domain(default_spec(DomainName::HandwrittenLike), 60, 8, world);
  const auto b = generate_domain(default_spec(DomainName::HandwrittenLike), 60, 8, world);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].image, b.train[i].image);
    EXPECT_EQ(a.train[i].label, b.train[i].label);
  }
}

TEST(MakeTask, PlateTargetUsesTheOtherFourAsSources)
{
  const GlyphWorld world;
  const Task t = make_task(DomainName::PlateLike, 50, 1, world);
  std::vector<DomainName> names;
  for (const auto& s : t.view.sources)
    names.push_back(s.spec.name);
  EXPECT_EQ(names, (std::vector<DomainName>{DomainName::SyntheticLike, DomainName::DocumentLike,
                                            DomainName::HandwrittenLike, DomainName::StreetLike}));
  EXPECT_EQ(t.view.target_unlabeled.size(), 45u);
  EXPECT_EQ(t.hidden_truth.size(), 45u);
  EXPECT_EQ(t.target_test.size(), 5u);
  EXPECT_EQ(t.hidden_truth.reads(), 0u);
}

TEST(MakeTask, DomainDataDoesNotDependOnTarget)
{
  const GlyphWorld world;
  const Task a = make_task(DomainName::PlateLike, 30, 4, world);
  const Task b = make_task(DomainName::DocumentLike, 30, 4, world);
  // Synthetic is a source in both.
  EXPECT_EQ(a.view.sources[0].train[3].image, b.view.sources[0].train[3].image);
}

// Access contract: nothing the trainer sees can carry a target label.
TEST(MakeTask, TrainerViewHoldsNoTargetLabels)
{
  static_assert(!std::is_aggregate_v<HiddenTruth>);
  static_assert(sizeof(UnlabeledImage) == sizeof(std::size_t) + sizeof(Image));
  const GlyphWorld world;
  const Task t = make_task(DomainName::StreetLike, 40, 2, world);
  for (const auto& s : t.view.sources)
    EXPECT_NE(s.spec.name, DomainName::StreetLike);
}

TEST(ParseDomain, KeysAndNames)
{
  EXPECT_EQ(parse_domain("document_like"), DomainName::DocumentLike);
  EXPECT_EQ(parse_domain("PlateLike"), DomainName::PlateLike);
  EXPECT_THROW(parse_domain("mnist"), std::invalid_argument);
}

// A model trained on plates only loses at least 20 points on the contrast-inverted street domain.
TEST(DomainShift, DisjointCorruptionCostsAccuracy)
{
  const GlyphWorld world;
  const auto plate = generate_domain(default_spec(DomainName::PlateLike), 1000, 5, world);
  auto street_spec = default_spec(DomainName::StreetLike);
  street_spec.length = LengthPolicy::plate_format();
  street_spec.name = DomainName::PlateLike;  // plate labels, street corruptions
  street_spec.corruption.invert_rate = 1.0;
  const auto street = generate_domain(street_spec, 1000, 6, world);

  ModelConfig cfg;
  cfg.image_height = world.height();
  cfg.image_width = world.width();
  cfg.hidden = cfg.enc_hidden = cfg.attn = 32;
  cfg.column_stride = 4;
  TrainConfig tc;
  tc.gamma = 5e-3;
  TrainState st = make_state(init_model(cfg, 3), tc);
  warmup(st, {plate}, 2500, 16, 3);
  const double own = evaluate_accuracy(st.model, plate.test);
  const double other = evaluate_accuracy(st.model, street.test);
  EXPECT_GE(own - other, 0.20) << "own " << own << " other " << other;
}
