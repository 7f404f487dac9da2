// Meta self-learning trainer: schedules, the inner/meta update, the outer
// step, warm-up and the training loop with its metrics log.

#ifndef METASL_META_HPP
#define METASL_META_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "metasl/domains.hpp"
#include "metasl/optim.hpp"
#include "metasl/pseudo.hpp"
#include "metasl/recognizer.hpp"

namespace metasl {

// ---------------------------------------------------------------- schedules

enum class InnerPolicy { Disabled, AllDomainsRandomSplit, PseudoAsMetaTestOnly };
enum class OuterPolicy { SourceOnly, AllDomains, PseudoOnly };
enum class ScheduleName { IAOS, IPOA, IPOP, Custom };

inline const char* inner_key(InnerPolicy p)
{
  switch (p) {
    case InnerPolicy::Disabled: return "disabled";
    case InnerPolicy::AllDomainsRandomSplit: return "all_domains_random_split";
    case InnerPolicy::PseudoAsMetaTestOnly: return "pseudo_as_meta_test_only";
  }
  return "?";
}

inline const char* outer_key(OuterPolicy p)
{
  switch (p) {
    case OuterPolicy::SourceOnly: return "source_only";
    case OuterPolicy::AllDomains: return "all_domains";
    case OuterPolicy::PseudoOnly: return "pseudo_only";
  }
  return "?";
}

inline InnerPolicy parse_inner(const std::string& s)
{
  for (auto p : {InnerPolicy::Disabled, InnerPolicy::AllDomainsRandomSplit, InnerPolicy::PseudoAsMetaTestOnly})
    if (s == inner_key(p))
      return p;
  throw std::invalid_argument("unknown inner policy: " + s);
}

inline OuterPolicy parse_outer(const std::string& s)
{
  for (auto p : {OuterPolicy::SourceOnly, OuterPolicy::AllDomains, OuterPolicy::PseudoOnly})
    if (s == outer_key(p))
      return p;
  throw std::invalid_argument("unknown outer policy: " + s);
}

struct ScheduleSpec {
  ScheduleName name = ScheduleName::IPOA;
  InnerPolicy inner = InnerPolicy::PseudoAsMetaTestOnly;
  OuterPolicy outer = OuterPolicy::AllDomains;

  static ScheduleSpec iaos() { return {ScheduleName::IAOS, InnerPolicy::AllDomainsRandomSplit, OuterPolicy::SourceOnly}; }
  static ScheduleSpec ipoa() { return {ScheduleName::IPOA, InnerPolicy::PseudoAsMetaTestOnly, OuterPolicy::AllDomains}; }
  static ScheduleSpec ipop() { return {ScheduleName::IPOP, InnerPolicy::PseudoAsMetaTestOnly, OuterPolicy::PseudoOnly}; }
  static ScheduleSpec custom(InnerPolicy in, OuterPolicy out) { return {ScheduleName::Custom, in, out}; }

  /// IAOA is accepted as another spelling of IAOS.
  static ScheduleSpec parse(const std::string& s)
  {
    if (s == "IAOS" || s == "IAOA")
      return iaos();
    if (s == "IPOA")
      return ipoa();
    if (s == "IPOP")
      return ipop();
    throw std::invalid_argument("unknown schedule '" + s + "' (expected IAOS, IAOA, IPOA or IPOP)");
  }

  std::string label() const
  {
    switch (name) {
      case ScheduleName::IAOS: return "IAOS";
      case ScheduleName::IPOA: return "IPOA";
      case ScheduleName::IPOP: return "IPOP";
      case ScheduleName::Custom: break;
    }
    return std::string(inner_key(inner)) + "/" + outer_key(outer);
  }

  bool operator==(const ScheduleSpec&) const = default;
};

inline const std::vector<ScheduleSpec>& named_schedules()
{
  static const std::vector<ScheduleSpec> all{ScheduleSpec::iaos(), ScheduleSpec::ipoa(), ScheduleSpec::ipop()};
  return all;
}

// ---------------------------------------------------------------- config

struct TrainConfig {
  double alpha = 1e-3;  // inner SGD step
  double beta = 1e-2;   // meta SGD step
  double gamma = 3e-3;  // outer Adam step
  std::size_t batch_per_domain = 8;
  std::size_t warmup_iters = 2000;
  std::size_t total_iters = 3000;
  std::optional<double> tau;  // unset: per-target default
  std::size_t pool_cap = 500;
  std::size_t refresh_interval = 200;
  std::size_t score_budget = 0;  // candidates decoded per refresh, 0 = all
  double split_ratio = 0.5;
  bool second_order = false;
  std::size_t second_order_limit = 500;
  std::size_t eval_interval = 100;
  bool step_decay = false;  // halve beta and gamma after every 40% of the run
  ConfidenceMode confidence = ConfidenceMode::Product;
  std::uint64_t seed = 1;

  void validate() const
  {
    auto bad = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
    if (!(alpha > 0.0) || !std::isfinite(alpha))
      bad("alpha must be a finite value > 0");
    if (!(beta > 0.0) || !std::isfinite(beta))
      bad("beta must be a finite value > 0");
    if (!(gamma > 0.0) || !std::isfinite(gamma))
      bad("gamma must be a finite value > 0");
    if (batch_per_domain == 0)
      bad("batch_per_domain must be positive");
    if (tau && !(*tau >= 0.0 && *tau <= 1.0))
      bad("tau must lie in [0,1]");
    if (refresh_interval == 0)
      bad("refresh_interval must be positive");
    if (!(split_ratio > 0.0 && split_ratio < 1.0))
      bad("split_ratio must lie in (0,1)");
    if (eval_interval == 0)
      bad("eval_interval must be positive");
  }

  double tau_for(DomainName target) const { return tau ? *tau : default_tau(target); }
};

// ---------------------------------------------------------------- batches

using Batch = std::vector<const LabeledSample*>;

inline std::vector<SampleRef> refs(const Batch& batch)
{
  std::vector<SampleRef> out;
  out.reserve(batch.size());
  for (const auto* s : batch)
    out.push_back({&s->image, &s->label});
  return out;
}

/// k distinct draws (or all of them when k >= n), in draw order.
inline Batch draw(std::span<const LabeledSample> from, std::size_t k, std::mt19937_64& rng)
{
  Batch out;
  if (from.empty() || k == 0)
    return out;
  if (k >= from.size()) {
    for (const auto& s : from)
      out.push_back(&s);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
  }
  std::vector<std::size_t> picked;
  std::uniform_int_distribution<std::size_t> pick(0, from.size() - 1);
  while (picked.size() < k) {
    const std::size_t i = pick(rng);
    if (std::find(picked.begin(), picked.end(), i) == picked.end())
      picked.push_back(i);
  }
  for (auto i : picked)
    out.push_back(&from[i]);
  return out;
}

/// batch_per_domain samples from each source domain.
inline Batch draw_sources(const std::vector<DomainDataset>& sources, std::size_t per_domain, std::mt19937_64& rng)
{
  Batch out;
  for (const auto& d : sources) {
    auto part = draw(d.train, per_domain, rng);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

/// Meta-train / meta-test partition of one iteration's samples.
struct MetaSplit {
  Batch meta_train;
  Batch meta_test;
};

/// AllDomainsRandomSplit shuffles sources and pseudo samples together and cuts
/// at round(ratio * n). PseudoAsMetaTestOnly uses sources as meta-train and the
/// pseudo samples as meta-test; with no pseudo samples it falls back to a
/// random split of the sources so the meta-test side is never empty.
inline MetaSplit split_batch(const Batch& sources, const Batch& pseudo, InnerPolicy policy, double ratio,
                             std::mt19937_64& rng)
{
  if (policy == InnerPolicy::Disabled)
    throw std::invalid_argument("split_batch: inner policy is disabled");
  if (sources.empty())
    throw std::invalid_argument("split_batch: source batch is empty");
  if (!(ratio > 0.0 && ratio < 1.0))
    throw std::invalid_argument("split_batch: ratio must lie in (0,1)");

  auto random_split = [&](Batch all) {
    if (all.size() < 2)
      throw std::invalid_argument("split_batch: need at least 2 samples to split");
    std::shuffle(all.begin(), all.end(), rng);
    auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(all.size())));
    k = std::clamp<std::size_t>(k, 1, all.size() - 1);
    MetaSplit s;
    s.meta_train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
    s.meta_test.assign(all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
    return s;
  };

  if (policy == InnerPolicy::AllDomainsRandomSplit) {
    Batch all = sources;
    all.insert(all.end(), pseudo.begin(), pseudo.end());
    return random_split(std::move(all));
  }
  if (pseudo.empty())
    return random_split(sources);
  return {sources, pseudo};
}

// ---------------------------------------------------------------- meta step

inline ParamSet& theta_of(ParamSet& p) { return p; }
inline ParamSet& theta_of(ModelParams& m) { return m.theta; }

struct MetaStepResult {
  double l_a = 0.0;  // meta-train loss at theta
  double l_b = 0.0;  // meta-test loss at the adapted parameters
  GradientSet update;  // gradient handed to the meta optimizer
};

/// Inner step theta' = theta - alpha * grad l_a(theta), then theta moves along
/// the meta gradient of l_b(theta') with the meta optimizer.
///
/// `loss_grad(model, batch)` returns the loss and leaves its gradient in the
/// model's parameter tensors. First-order mode uses grad l_b(theta') directly.
/// Second-order mode applies (I - alpha H_a) with Hessian-vector products from
/// central differences of grad l_a; it refuses models above `second_order_limit`
/// parameters.
template <class Model, class BatchT, class LossGrad>
MetaStepResult meta_step(Model& model, OptimizerState& meta_opt, const BatchT& meta_train, const BatchT& meta_test,
                         double alpha, bool second_order, LossGrad&& loss_grad, std::size_t second_order_limit = 500)
{
  ParamSet& theta = theta_of(model);
  if (second_order && theta.count() > second_order_limit)
    throw std::invalid_argument("meta_step: second-order mode is limited to " + std::to_string(second_order_limit) +
                                " parameters, model has " + std::to_string(theta.count()));

  MetaStepResult r;
  r.l_a = loss_grad(model, meta_train);
  const GradientSet g_a = theta.gradients();

  Model adapted = model;
  OptimizerState inner = OptimizerState::sgd(alpha);
  apply_update(theta_of(adapted), g_a, inner);
  r.l_b = loss_grad(adapted, meta_test);
  r.update = theta_of(adapted).gradients();

  if (second_order && alpha != 0.0) {
    const std::vector<double> v = flatten(r.update);
    const double norm = l2_norm(v);
    if (norm > 0.0) {
      const double eps = 1e-5;
      const std::vector<double> base = theta.flatten();
      auto grad_at = [&](double sign) {
        Model probe = model;
        std::vector<double> shifted(base);
        for (std::size_t i = 0; i < shifted.size(); ++i)
          shifted[i] += sign * eps * v[i] / norm;
        theta_of(probe).assign_flat(shifted);
        loss_grad(probe, meta_train);
        return flatten(theta_of(probe).gradients());
      };
      const auto gp = grad_at(1.0);
      const auto gm = grad_at(-1.0);
      std::size_t off = 0;
      for (auto& group : r.update)
        for (auto& x : group) {
          const double hv = norm * (gp[off] - gm[off]) / (2.0 * eps);
          x -= alpha * hv;
          ++off;
        }
    }
  }

  apply_update(theta, r.update, meta_opt);
  return r;
}

/// One outer-optimizer step on `batch`; returns the loss before the step.
template <class Model, class BatchT, class LossGrad>
double outer_step(Model& model, OptimizerState& outer_opt, const BatchT& batch, LossGrad&& loss_grad)
{
  const double loss = loss_grad(model, batch);
  apply_update(theta_of(model), theta_of(model).gradients(), outer_opt);
  return loss;
}

/// Loss/gradient of the recognizer on a batch of samples.
inline double recognizer_loss_grad(ModelParams& model, const Batch& batch)
{
  const auto r = refs(batch);
  return loss_and_grad(model, r);
}

// ---------------------------------------------------------------- training

struct MetricsRecord {
  std::size_t iteration = 0;
  double l_a = std::numeric_limits<double>::quiet_NaN();
  double l_b = std::numeric_limits<double>::quiet_NaN();
  double outer_loss = std::numeric_limits<double>::quiet_NaN();
  std::size_t pool_count = 0;
  double pool_accuracy = 1.0;
  bool pool_vacuous = true;
  double target_test_accuracy = std::numeric_limits<double>::quiet_NaN();
};

/// Evaluation callbacks. The trainer never sees target labels; these are the
/// only route by which truth-derived numbers enter the log.
struct TrainHooks {
  std::function<double(const ModelParams&)> test_accuracy;
  std::function<PoolMetrics(const PseudoPool&, std::size_t)> pool_metrics;
  std::function<void(const std::string&)> on_event;
  // Sees every batch: "meta_train", "meta_test" or "outer".
  std::function<void(const char*, const Batch&)> on_batch;
};

struct TrainState {
  ModelParams model;
  OptimizerState meta_opt = OptimizerState::sgd(1e-2);
  OptimizerState outer_opt = OptimizerState::adam(3e-3);
  PseudoPool pool;
  std::size_t iteration = 0;
  std::size_t skipped_outer = 0;
  std::vector<MetricsRecord> log;
};

inline TrainState make_state(ModelParams model, const TrainConfig& cfg)
{
  TrainState s;
  s.model = std::move(model);
  s.meta_opt = OptimizerState::sgd(cfg.beta);
  s.outer_opt = OptimizerState::adam(cfg.gamma);
  return s;
}

/// Source-only pre-training with the outer optimizer.
inline std::vector<double> warmup(TrainState& state, const std::vector<DomainDataset>& sources, std::size_t iters,
                                  std::size_t batch_per_domain, std::uint64_t seed, std::size_t log_every = 0)
{
  if (sources.empty())
    throw std::invalid_argument("warmup: no source domains");
  std::mt19937_64 rng(derive_seed(seed, 0x7761726dULL));
  std::vector<double> losses;
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t it = 0; it < iters; ++it) {
    const auto batch = draw_sources(sources, batch_per_domain, rng);
    acc += outer_step(state.model, state.outer_opt, batch, recognizer_loss_grad);
    ++n;
    if ((log_every && (it + 1) % log_every == 0) || it + 1 == iters) {
      losses.push_back(acc / static_cast<double>(n));
      acc = 0.0;
      n = 0;
    }
  }
  return losses;
}

inline bool uses_pool(const ScheduleSpec& s)
{
  return s.inner != InnerPolicy::Disabled || s.outer != OuterPolicy::SourceOnly;
}

/// Runs cfg.total_iters iterations of the schedule from the state's current
/// parameters. An inner policy of Disabled skips the meta step, which turns
/// the loop into plain source-only, pseudo-only or mixed training.
inline void train(TrainState& state, const TrainerView& view, const TrainConfig& cfg, const ScheduleSpec& schedule,
                  const TrainHooks& hooks = {})
{
  cfg.validate();
  if (view.sources.empty())
    throw std::invalid_argument("train: no source domains");
  const double tau = cfg.tau_for(view.target);
  const bool pseudo = uses_pool(schedule);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x747261696eULL, state.iteration));
  state.pool.tau = tau;
  state.pool.cap = cfg.pool_cap;
  state.pool.refresh_interval = cfg.refresh_interval;
  const double beta0 = cfg.beta, gamma0 = cfg.gamma;

  auto event = [&](const std::string& m) {
    if (hooks.on_event)
      hooks.on_event(m);
  };

  double sum_a = 0, sum_b = 0, sum_o = 0;
  std::size_t n_meta = 0, n_outer = 0;
  for (std::size_t it = 0; it < cfg.total_iters; ++it) {
    double scale = 1.0;
    if (cfg.step_decay)
      for (std::size_t k = 1; 5 * it >= 2 * k * cfg.total_iters && k <= 2; ++k)
        scale *= 0.5;
    state.meta_opt.learning_rate = beta0 * scale;
    state.outer_opt.learning_rate = gamma0 * scale;

    if (pseudo && it % cfg.refresh_interval == 0) {
      state.pool = regenerate(state.model, view.target_unlabeled, tau, cfg.pool_cap,
                              derive_seed(cfg.seed, 0x706f6f6cULL, state.iteration), cfg.score_budget, cfg.confidence);
      state.pool.refresh_interval = cfg.refresh_interval;
    }

    if (schedule.inner != InnerPolicy::Disabled) {
      const Batch src = draw_sources(view.sources, cfg.batch_per_domain, rng);
      const Batch pl = draw(state.pool.entries, cfg.batch_per_domain, rng);
      const MetaSplit split = split_batch(src, pl, schedule.inner, cfg.split_ratio, rng);
      if (hooks.on_batch) {
        hooks.on_batch("meta_train", split.meta_train);
        hooks.on_batch("meta_test", split.meta_test);
      }
      const auto r = meta_step(state.model, state.meta_opt, split.meta_train, split.meta_test, cfg.alpha,
                               cfg.second_order, recognizer_loss_grad, cfg.second_order_limit);
      sum_a += r.l_a;
      sum_b += r.l_b;
      ++n_meta;
    }

    Batch outer;
    if (schedule.outer != OuterPolicy::PseudoOnly)
      outer = draw_sources(view.sources, cfg.batch_per_domain, rng);
    if (schedule.outer != OuterPolicy::SourceOnly) {
      const Batch pl = draw(state.pool.entries, cfg.batch_per_domain, rng);
      outer.insert(outer.end(), pl.begin(), pl.end());
    }
    if (hooks.on_batch)
      hooks.on_batch("outer", outer);
    if (outer.empty()) {
      ++state.skipped_outer;
      event("iteration " + std::to_string(state.iteration) + ": pseudo pool empty, outer step skipped");
    } else {
      sum_o += outer_step(state.model, state.outer_opt, outer, recognizer_loss_grad);
      ++n_outer;
    }

    ++state.iteration;
    if ((it + 1) % cfg.eval_interval == 0 || it + 1 == cfg.total_iters) {
      MetricsRecord rec;
      rec.iteration = state.iteration;
      if (n_meta) {
        rec.l_a = sum_a / static_cast<double>(n_meta);
        rec.l_b = sum_b / static_cast<double>(n_meta);
      }
      if (n_outer)
        rec.outer_loss = sum_o / static_cast<double>(n_outer);
      rec.pool_count = state.pool.size();
      if (hooks.pool_metrics) {
        const auto pm = hooks.pool_metrics(state.pool, state.iteration);
        rec.pool_accuracy = pm.accuracy;
        rec.pool_vacuous = pm.vacuous;
      } else {
        rec.pool_vacuous = state.pool.empty();
        rec.pool_accuracy = state.pool.empty() ? 1.0 : std::numeric_limits<double>::quiet_NaN();
      }
      if (hooks.test_accuracy)
        rec.target_test_accuracy = hooks.test_accuracy(state.model);
      state.log.push_back(rec);
      sum_a = sum_b = sum_o = 0.0;
      n_meta = n_outer = 0;
    }
  }
  state.meta_opt.learning_rate = beta0;
  state.outer_opt.learning_rate = gamma0;
}

/// Sequence accuracy of greedy decoding on a labeled set.
inline double evaluate_accuracy(const ModelParams& model, std::span<const LabeledSample> samples,
                                std::size_t chunk = 256)
{
  if (samples.empty())
    return 0.0;
  std::size_t correct = 0;
  for (std::size_t off = 0; off < samples.size(); off += chunk) {
    const std::size_t n = std::min(chunk, samples.size() - off);
    std::vector<const Image*> images(n);
    for (std::size_t k = 0; k < n; ++k)
      images[k] = &samples[off + k].image;
    const auto dec = greedy_decode(model, images, model.config.max_steps);
    for (std::size_t k = 0; k < n; ++k)
      correct += dec[k].label == samples[off + k].label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

/// Hooks wired to a task's held-out test split and hidden truth.
inline TrainHooks task_hooks(const Task& task)
{
  TrainHooks h;
  h.test_accuracy = [&task](const ModelParams& m) { return evaluate_accuracy(m, task.target_test); };
  h.pool_metrics = [&task](const PseudoPool& p, std::size_t it) { return measure(p, task.hidden_truth, it); };
  return h;
}

}  // namespace metasl

#endif  // METASL_META_HPP
