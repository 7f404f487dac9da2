// Pseudo-label pool: confident greedy predictions on unlabeled target images,
// plus the metric-only path that scores them against the hidden truth.

#ifndef METASL_PSEUDO_HPP
#define METASL_PSEUDO_HPP

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "metasl/domains.hpp"
#include "metasl/recognizer.hpp"

namespace metasl {

/// Sole read path into HiddenTruth.
struct TruthAccess {
  static const TokenSeq& label(const HiddenTruth& truth, std::size_t index)
  {
    if (index >= truth.labels_.size())
      throw std::out_of_range("hidden truth has no entry for target index " + std::to_string(index));
    ++truth.reads_;
    return truth.labels_[index];
  }
};

struct PseudoPool {
  std::vector<LabeledSample> entries;
  double tau = 0.9;
  std::size_t cap = 500;
  std::size_t refresh_interval = 200;

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }
};

struct PoolMetrics {
  std::size_t iteration = 0;
  std::size_t count = 0;
  double accuracy = 1.0;
  bool vacuous = true;  // empty pool; accuracy is reported as 1.0
};

/// Defaults: 0.9 everywhere, 0.98 for the handwritten-like target.
inline double default_tau(DomainName target)
{
  return target == DomainName::HandwrittenLike ? 0.98 : 0.9;
}

struct ScoredCandidate {
  std::size_t position = 0;  // offset into the candidate span
  TokenSeq label;
  double confidence = 0.0;
  bool terminated = true;  // decoder emitted EOS before running out of steps
};

/// Greedy-decodes every candidate, or a seeded subsample of `budget` of them
/// (kept in candidate order). A budget of 0 means no limit.
inline std::vector<ScoredCandidate> score_candidates(const ModelParams& model, std::span<const UnlabeledImage> candidates,
                                                     std::size_t budget, std::uint64_t seed,
                                                     ConfidenceMode mode = ConfidenceMode::Product,
                                                     std::size_t chunk = 256)
{
  std::vector<std::size_t> picked(candidates.size());
  std::iota(picked.begin(), picked.end(), std::size_t{0});
  if (budget > 0 && budget < picked.size()) {
    std::mt19937_64 rng(derive_seed(seed, 0x706f6f6cULL));
    std::shuffle(picked.begin(), picked.end(), rng);
    picked.resize(budget);
    std::sort(picked.begin(), picked.end());
  }

  std::vector<ScoredCandidate> scored;
  scored.reserve(picked.size());
  for (std::size_t off = 0; off < picked.size(); off += chunk) {
    const std::size_t n = std::min(chunk, picked.size() - off);
    std::vector<const Image*> images(n);
    for (std::size_t k = 0; k < n; ++k)
      images[k] = &candidates[picked[off + k]].image;
    auto decoded = greedy_decode(model, images, model.config.max_steps, mode);
    for (std::size_t k = 0; k < n; ++k) {
      const bool ended = decoded[k].label.size() < model.config.max_steps;
      scored.push_back({picked[off + k], std::move(decoded[k].label), decoded[k].confidence, ended});
    }
  }
  return scored;
}

/// Keeps candidates with confidence > tau and a non-empty, EOS-terminated label, then the
/// `cap` most confident; ties keep candidate order.
inline PseudoPool admit(const std::vector<ScoredCandidate>& scored, std::span<const UnlabeledImage> candidates,
                        double tau, std::size_t cap)
{
  if (!(tau >= 0.0 && tau <= 1.0))
    throw std::invalid_argument("pseudo pool: tau must lie in [0,1]");
  std::vector<const ScoredCandidate*> kept;
  for (const auto& c : scored)
    if (c.confidence > tau && !c.label.empty() && c.terminated)
      kept.push_back(&c);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const ScoredCandidate* a, const ScoredCandidate* b) { return a->confidence > b->confidence; });
  if (kept.size() > cap)
    kept.resize(cap);

  PseudoPool pool;
  pool.tau = tau;
  pool.cap = cap;
  pool.entries.reserve(kept.size());
  for (const auto* c : kept) {
    const auto& src = candidates[c->position];
    LabeledSample s;
    s.image = src.image;
    s.label = c->label;
    s.is_pseudo = true;
    s.confidence = c->confidence;
    s.index = src.index;
    pool.entries.push_back(std::move(s));
  }
  return pool;
}

/// Replaces the pool wholesale with the current model's confident predictions.
inline PseudoPool regenerate(const ModelParams& model, std::span<const UnlabeledImage> unlabeled, double tau,
                             std::size_t cap, std::uint64_t seed, std::size_t budget = 0,
                             ConfidenceMode mode = ConfidenceMode::Product)
{
  if (!(tau >= 0.0 && tau <= 1.0))
    throw std::invalid_argument("pseudo pool: tau must lie in [0,1]");
  // Confidence is a product (or min) of probabilities, never above 1.
  if (tau >= 1.0 || cap == 0) {
    PseudoPool pool;
    pool.tau = tau;
    pool.cap = cap;
    return pool;
  }
  return admit(score_candidates(model, unlabeled, budget, seed, mode), unlabeled, tau, cap);
}

inline PoolMetrics measure(const PseudoPool& pool, const HiddenTruth& truth, std::size_t iteration = 0)
{
  PoolMetrics m;
  m.iteration = iteration;
  m.count = pool.size();
  if (pool.empty())
    return m;
  std::size_t correct = 0;
  for (const auto& e : pool.entries)
    correct += TruthAccess::label(truth, e.index) == e.label ? 1 : 0;
  m.vacuous = false;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(pool.size());
  return m;
}

/// One JSON object per line: index, pseudo_label, confidence and, when the
/// truth is supplied, correct.
inline void export_jsonl(const PseudoPool& pool, std::ostream& os, const HiddenTruth* truth = nullptr)
{
  for (const auto& e : pool.entries) {
    nlohmann::json j;
    j["index"] = e.index;
    j["pseudo_label"] = e.label;
    j["confidence"] = e.confidence;
    if (truth)
      j["correct"] = TruthAccess::label(*truth, e.index) == e.label;
    os << j.dump() << '\n';
  }
}

}  // namespace metasl

#endif  // METASL_PSEUDO_HPP
