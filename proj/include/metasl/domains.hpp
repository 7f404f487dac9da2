// Deterministic generator of five toy text domains.
//
// Every token has a fixed procedurally generated G x G bitmap. A sample is the
// horizontal concatenation of its glyphs, left-aligned on a G x (G * max_len)
// canvas, followed by a per-domain corruption pipeline:
//   jitter -> dilation -> clutter -> dropout -> inversion -> noise -> clamp

#ifndef METASL_DOMAINS_HPP
#define METASL_DOMAINS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "metasl/core.hpp"

namespace metasl {

enum class DomainName { SyntheticLike, DocumentLike, HandwrittenLike, StreetLike, PlateLike };

inline constexpr std::array<DomainName, 5> kAllDomains = {DomainName::SyntheticLike, DomainName::DocumentLike,
                                                           DomainName::HandwrittenLike, DomainName::StreetLike,
                                                           DomainName::PlateLike};

inline std::string_view domain_key(DomainName d)
{
  switch (d) {
    case DomainName::SyntheticLike: return "synthetic_like";
    case DomainName::DocumentLike: return "document_like";
    case DomainName::HandwrittenLike: return "handwritten_like";
    case DomainName::StreetLike: return "street_like";
    case DomainName::PlateLike: return "plate_like";
  }
  return "unknown";
}

/// Accepts snake_case keys ("plate_like") and type names ("PlateLike").
inline DomainName parse_domain(std::string_view s)
{
  static constexpr std::array<std::string_view, 5> camel = {"SyntheticLike", "DocumentLike", "HandwrittenLike",
                                                            "StreetLike", "PlateLike"};
  for (std::size_t i = 0; i < kAllDomains.size(); ++i)
    if (s == domain_key(kAllDomains[i]) || s == camel[i])
      return kAllDomains[i];
  throw std::invalid_argument("unknown domain: " + std::string(s));
}

struct LengthPolicy {
  enum class Kind { Fixed, Uniform, PlateFormat };
  Kind kind = Kind::Uniform;
  std::size_t min = 1;
  std::size_t max = 1;

  static LengthPolicy fixed(std::size_t n) { return {Kind::Fixed, n, n}; }
  static LengthPolicy uniform(std::size_t lo, std::size_t hi) { return {Kind::Uniform, lo, hi}; }
  static LengthPolicy plate_format() { return {Kind::PlateFormat, 7, 7}; }
  bool operator==(const LengthPolicy&) const = default;
};

struct Corruption {
  double noise_std = 0.0;
  double dropout_rate = 0.0;
  std::size_t clutter_blocks = 0;
  bool dilate = false;
  double jitter_rate = 0.0;  // per glyph, probability of a one-pixel shift on each axis
  double invert_rate = 0.0;  // per sample, probability of contrast inversion

  void validate() const
  {
    if (!(noise_std >= 0.0))
      throw std::invalid_argument("corruption: noise stddev must be >= 0");
    for (double r : {dropout_rate, jitter_rate, invert_rate})
      if (!(r >= 0.0 && r <= 1.0))
        throw std::invalid_argument("corruption: rates must lie in [0,1]");
  }
  bool operator==(const Corruption&) const = default;
};

enum class CorpusPolicy { Uniform, Skewed };

struct DomainSpec {
  DomainName name = DomainName::SyntheticLike;
  LengthPolicy length;
  Corruption corruption;
  CorpusPolicy corpus = CorpusPolicy::Uniform;

  bool operator==(const DomainSpec&) const = default;
};

/// Plate labels: one "region" token from the first kPlateRegions glyphs, then
/// six tokens from the remaining glyphs.
inline constexpr std::size_t kPlateRegions = 5;
inline constexpr std::array<double, kPlateRegions> kPlateRegionWeights = {0.6, 0.1, 0.1, 0.1, 0.1};

inline DomainSpec default_spec(DomainName d)
{
  DomainSpec s;
  s.name = d;
  switch (d) {
    case DomainName::SyntheticLike:
      s.length = LengthPolicy::uniform(4, 10);
      s.corruption = {.noise_std = 0.05, .clutter_blocks = 3};
      break;
    case DomainName::DocumentLike:
      s.length = LengthPolicy::fixed(10);
      s.corruption = {.noise_std = 0.1, .dropout_rate = 0.2};
      s.corpus = CorpusPolicy::Skewed;
      break;
    case DomainName::HandwrittenLike:
      s.length = LengthPolicy::uniform(2, 8);
      s.corruption = {.noise_std = 0.05, .dilate = true, .jitter_rate = 0.25};
      break;
    case DomainName::StreetLike:
      s.length = LengthPolicy::uniform(1, 6);
      s.corruption = {.noise_std = 0.1, .clutter_blocks = 4, .invert_rate = 0.5};
      s.corpus = CorpusPolicy::Skewed;
      break;
    case DomainName::PlateLike:
      s.length = LengthPolicy::plate_format();
      s.corruption = {.noise_std = 0.1, .dropout_rate = 0.15};
      break;
  }
  return s;
}

/// Charset, glyph bitmaps and canvas geometry shared by all domains.
class GlyphWorld {
 public:
  explicit GlyphWorld(std::size_t glyphs = 16, std::size_t glyph_size = 4, std::size_t max_len = 10)
      : charset_(glyphs), glyph_size_(glyph_size), max_len_(max_len)
  {
    if (glyph_size < 3)
      throw std::invalid_argument("glyph size must be >= 3");
    if (max_len < 1)
      throw std::invalid_argument("max_len must be >= 1");
    build_bitmaps();
  }

  const Charset& charset() const noexcept { return charset_; }
  std::size_t glyph_size() const noexcept { return glyph_size_; }
  std::size_t max_len() const noexcept { return max_len_; }
  std::size_t height() const noexcept { return glyph_size_; }
  std::size_t width() const noexcept { return glyph_size_ * max_len_; }
  const Image& bitmap(Token t) const { return bitmaps_.at(static_cast<std::size_t>(t)); }

 private:
  // Random bitmaps with roughly half the cells lit, pairwise Hamming distance
  // of at least a quarter of the cells. Fixed seed: the table is part of the charset.
  void build_bitmaps()
  {
    const std::size_t G = glyph_size_, cells = G * G, min_dist = cells / 4;
    std::mt19937_64 rng(derive_seed(0x676c797068ULL, charset_.glyphs(), G));
    std::bernoulli_distribution lit(0.5);
    while (bitmaps_.size() < charset_.glyphs()) {
      Image img(G, G);
      std::size_t on = 0;
      for (auto& p : img.pixels) {
        p = lit(rng) ? 1.0 : 0.0;
        on += p > 0.0;
      }
      if (on < cells / 4 || on > 3 * cells / 4)
        continue;
      bool distinct = true;
      for (const auto& other : bitmaps_) {
        std::size_t d = 0;
        for (std::size_t i = 0; i < cells; ++i)
          d += img.pixels[i] != other.pixels[i];
        if (d < min_dist) {
          distinct = false;
          break;
        }
      }
      if (distinct)
        bitmaps_.push_back(std::move(img));
    }
  }

  Charset charset_;
  std::size_t glyph_size_;
  std::size_t max_len_;
  std::vector<Image> bitmaps_;
};

struct LabeledSample {
  Image image;
  TokenSeq label;
  DomainName domain = DomainName::SyntheticLike;
  bool is_pseudo = false;
  double confidence = 1.0;
  std::size_t index = 0;  // generation index within its domain split
};

struct DomainDataset {
  DomainSpec spec;
  std::uint64_t seed = 0;
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
};

namespace detail {

inline void clamp01(Image& img)
{
  for (auto& p : img.pixels)
    p = std::clamp(p, 0.0, 1.0);
}

}  // namespace detail

/// Clean glyph concatenation followed by the domain's corruptions.
inline Image render(const TokenSeq& label, const DomainSpec& spec, std::uint64_t seed, const GlyphWorld& world)
{
  if (label.empty())
    throw std::invalid_argument("render: empty label");
  if (label.size() > world.max_len())
    throw std::invalid_argument("render: label longer than canvas");
  for (Token t : label)
    if (!world.charset().is_glyph(t))
      throw std::invalid_argument("render: unknown token " + std::to_string(t));
  spec.corruption.validate();

  const auto& c = spec.corruption;
  const std::size_t G = world.glyph_size(), H = world.height(), W = world.width();
  std::mt19937_64 rng(derive_seed(seed, 0x72656e646572ULL));
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  Image img(H, W);
  for (std::size_t k = 0; k < label.size(); ++k) {
    const Image& glyph = world.bitmap(label[k]);
    int dy = 0, dx = 0;
    if (c.jitter_rate > 0.0) {
      if (u01(rng) < c.jitter_rate)
        dy = u01(rng) < 0.5 ? -1 : 1;
      if (u01(rng) < c.jitter_rate)
        dx = u01(rng) < 0.5 ? -1 : 1;
    }
    for (std::size_t r = 0; r < G; ++r)
      for (std::size_t q = 0; q < G; ++q) {
        const int sr = static_cast<int>(r) - dy;
        const int sq = static_cast<int>(q) - dx;
        if (sr < 0 || sq < 0 || sr >= static_cast<int>(G) || sq >= static_cast<int>(G))
          continue;
        img.at(r, k * G + q) = glyph.at(static_cast<std::size_t>(sr), static_cast<std::size_t>(sq));
      }
  }

  if (c.dilate) {
    Image thick = img;
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t q = 0; q + 1 < W; ++q)
        thick.at(r, q + 1) = std::max(thick.at(r, q + 1), 0.5 * img.at(r, q));
    img = std::move(thick);
  }

  // Clutter: short horizontal strokes, vertical strokes and small blocks.
  for (std::size_t b = 0; b < c.clutter_blocks; ++b) {
    const auto shape = static_cast<int>(u01(rng) * 3.0);
    std::size_t h = 1, w = 1;
    if (shape == 0)
      w = 2 + static_cast<std::size_t>(u01(rng) * 3.0);
    else if (shape == 1)
      h = std::min<std::size_t>(H, 2 + static_cast<std::size_t>(u01(rng) * 2.0));
    else
      h = w = 2;
    const auto r0 = static_cast<std::size_t>(u01(rng) * static_cast<double>(H - std::min(h, H) + 1));
    const auto q0 = static_cast<std::size_t>(u01(rng) * static_cast<double>(W - std::min(w, W) + 1));
    const double level = 0.5 + 0.5 * u01(rng);
    for (std::size_t r = r0; r < std::min(H, r0 + h); ++r)
      for (std::size_t q = q0; q < std::min(W, q0 + w); ++q)
        img.at(r, q) = std::max(img.at(r, q), level);
  }

  if (c.dropout_rate > 0.0)
    for (auto& p : img.pixels)
      if (u01(rng) < c.dropout_rate)
        p = 0.0;

  if (c.invert_rate > 0.0 && u01(rng) < c.invert_rate)
    for (auto& p : img.pixels)
      p = 1.0 - p;

  if (c.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, c.noise_std);
    for (auto& p : img.pixels)
      p += noise(rng);
  }
  detail::clamp01(img);
  return img;
}

/// Draws a label according to the spec's length and corpus policies.
inline TokenSeq sample_label(const DomainSpec& spec, std::mt19937_64& rng, const GlyphWorld& world)
{
  const std::size_t K = world.charset().glyphs();
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  if (spec.length.kind == LengthPolicy::Kind::PlateFormat) {
    if (K <= kPlateRegions + 1)
      throw std::invalid_argument("plate format needs more than " + std::to_string(kPlateRegions + 1) + " glyphs");
    std::discrete_distribution<std::size_t> region(kPlateRegionWeights.begin(), kPlateRegionWeights.end());
    std::uniform_int_distribution<std::size_t> rest(kPlateRegions, K - 1);
    TokenSeq label{static_cast<Token>(region(rng))};
    for (int i = 0; i < 6; ++i)
      label.push_back(static_cast<Token>(rest(rng)));
    return label;
  }

  std::size_t len = spec.length.min;
  if (spec.length.kind == LengthPolicy::Kind::Uniform)
    len = std::uniform_int_distribution<std::size_t>(spec.length.min, spec.length.max)(rng);
  if (len < 1 || len > world.max_len())
    throw std::invalid_argument("length policy produces labels outside [1, max_len]");

  std::vector<double> weights(K, 1.0);
  if (spec.corpus == CorpusPolicy::Skewed) {
    // Zipf-like over a domain-specific rotation of the glyph ids.
    const std::size_t shift = (static_cast<std::size_t>(spec.name) * 5) % K;
    for (std::size_t k = 0; k < K; ++k)
      weights[(k + shift) % K] = 1.0 / static_cast<double>(k + 1);
  }
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  TokenSeq label(len);
  for (auto& t : label)
    t = static_cast<Token>(pick(rng));
  return label;
}

/// n samples split 9:1 into train/test. Every sample has its own RNG stream
/// derived from (seed, domain, index), so train and test never share a seed.
inline DomainDataset generate_domain(const DomainSpec& spec, std::size_t n, std::uint64_t seed,
                                     const GlyphWorld& world)
{
  if (n < 10)
    throw std::invalid_argument("generate_domain: n must be >= 10, got " + std::to_string(n));
  spec.corruption.validate();
  if (spec.name == DomainName::PlateLike && spec.length.kind != LengthPolicy::Kind::PlateFormat)
    throw std::invalid_argument("generate_domain: plate domain requires the plate length policy");

  DomainDataset ds;
  ds.spec = spec;
  ds.seed = seed;
  const std::size_t n_test = static_cast<std::size_t>(std::lround(static_cast<double>(n) / 10.0));
  const std::size_t n_train = n - n_test;
  const auto dom = static_cast<std::uint64_t>(spec.name);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed(seed, dom, i, 1));
    LabeledSample s;
    s.label = sample_label(spec, rng, world);
    s.image = render(s.label, spec, derive_seed(seed, dom, i, 2), world);
    s.domain = spec.name;
    s.index = i < n_train ? i : i - n_train;
    (i < n_train ? ds.train : ds.test).push_back(std::move(s));
  }
  return ds;
}

/// Target image without its label.
struct UnlabeledImage {
  std::size_t index = 0;
  Image image;
};

struct TruthAccess;

/// Labels of the target training split. Readable only through TruthAccess,
/// which the pseudo-label metric path uses; every read is counted.
class HiddenTruth {
 public:
  HiddenTruth() = default;
  static HiddenTruth from_labels(std::vector<TokenSeq> labels)
  {
    HiddenTruth h;
    h.labels_ = std::move(labels);
    return h;
  }

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t reads() const noexcept { return reads_; }

 private:
  friend struct TruthAccess;
  std::vector<TokenSeq> labels_;
  mutable std::size_t reads_ = 0;
};

/// What the trainer may see: labeled sources and unlabeled target images.
struct TrainerView {
  DomainName target = DomainName::PlateLike;
  std::vector<DomainDataset> sources;
  std::vector<UnlabeledImage> target_unlabeled;
};

struct Task {
  TrainerView view;
  std::vector<LabeledSample> target_test;
  HiddenTruth hidden_truth;
};

inline std::vector<DomainName> source_domains(DomainName target)
{
  std::vector<DomainName> out;
  for (auto d : kAllDomains)
    if (d != target)
      out.push_back(d);
  return out;
}

/// One target, the other four as sources. Each domain's data depends only on
/// (seed, domain), so the same seed yields the same domain data for every target.
inline Task make_task(DomainName target, std::size_t n_per_domain, std::uint64_t seed, const GlyphWorld& world)
{
  Task task;
  task.view.target = target;
  for (auto d : kAllDomains) {
    auto ds = generate_domain(default_spec(d), n_per_domain, derive_seed(seed, static_cast<std::uint64_t>(d)), world);
    if (d != target) {
      task.view.sources.push_back(std::move(ds));
      continue;
    }
    std::vector<TokenSeq> truth;
    truth.reserve(ds.train.size());
    for (auto& s : ds.train) {
      truth.push_back(std::move(s.label));
      task.view.target_unlabeled.push_back({s.index, std::move(s.image)});
    }
    task.hidden_truth = HiddenTruth::from_labels(std::move(truth));
    task.target_test = std::move(ds.test);
  }
  return task;
}

inline Task make_task(std::string_view target, std::size_t n_per_domain, std::uint64_t seed, const GlyphWorld& world)
{
  return make_task(parse_domain(target), n_per_domain, seed, world);
}

}  // namespace metasl

#endif  // METASL_DOMAINS_HPP
