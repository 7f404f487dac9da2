// Experiment orchestration: JSON configs, seeded benchmark runs over targets
// and methods, and the aggregated report.

#ifndef METASL_HARNESS_HPP
#define METASL_HARNESS_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "metasl/domains.hpp"
#include "metasl/io.hpp"
#include "metasl/meta.hpp"
#include "metasl/pseudo.hpp"
#include "metasl/recognizer.hpp"

namespace metasl {

/// Raised for invalid experiment configurations (the CLI maps it to exit 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline const std::vector<std::string>& method_names()
{
  static const std::vector<std::string> names{"SourceOnly", "MetaOnly", "PseudoOnly", "MetaSelfLearning"};
  return names;
}

struct ExperimentConfig {
  // task
  std::vector<DomainName> targets{kAllDomains.begin(), kAllDomains.end()};
  std::size_t n_per_domain = 2000;
  std::uint64_t seed = 1;
  std::size_t repeats = 3;
  std::size_t glyphs = 16;
  std::size_t glyph_size = 4;
  std::size_t max_len = 10;
  // model widths; image geometry follows from the task
  std::size_t hidden = 32;
  std::size_t enc_hidden = 32;
  std::size_t attn = 32;
  std::size_t embed = 8;
  std::size_t column_stride = 4;
  TrainConfig train;
  double warmup_gamma = 1e-2;  // Adam rate during warm-up
  // what to run
  std::string method = "MetaSelfLearning";
  ScheduleSpec schedule = ScheduleSpec::ipoa();
  std::vector<std::string> methods = method_names();
  std::vector<ScheduleSpec> schedules = named_schedules();
  std::string output_dir = "runs";

  ExperimentConfig()
  {
    train.alpha = 1e-3;
    train.beta = 1e-3;
    train.gamma = 1e-3;
  }

  ModelConfig model() const
  {
    ModelConfig m;
    m.image_height = glyph_size;
    m.image_width = glyph_size * max_len;
    m.glyphs = glyphs;
    m.enc_hidden = enc_hidden;
    m.hidden = hidden;
    m.attn = attn;
    m.embed = embed;
    m.max_steps = max_len + 1;
    m.column_stride = column_stride;
    return m;
  }

  GlyphWorld world() const { return GlyphWorld(glyphs, glyph_size, max_len); }

  void validate() const
  {
    auto bad = [](const std::string& m) { throw ConfigError(m); };
    if (targets.empty())
      bad("task.targets must not be empty");
    if (n_per_domain < 10)
      bad("task.n_per_domain must be at least 10");
    if (repeats == 0)
      bad("task.repeats must be positive");
    if (!(warmup_gamma > 0.0))
      bad("train.warmup_gamma must be > 0");
    if (std::find(method_names().begin(), method_names().end(), method) == method_names().end())
      bad("unknown method '" + method + "'");
    for (const auto& m : methods)
      if (std::find(method_names().begin(), method_names().end(), m) == method_names().end())
        bad("unknown method '" + m + "'");
    if (schedules.empty() && std::find(methods.begin(), methods.end(), "MetaSelfLearning") != methods.end())
      bad("schedules must not be empty when MetaSelfLearning is requested");
    try {
      train.validate();
      model().validate();
      world();
    } catch (const std::invalid_argument& e) {
      bad(e.what());
    }
  }
};

// ---------------------------------------------------------------- JSON

namespace detail {

inline json schedule_to_json(const ScheduleSpec& s)
{
  if (s.name != ScheduleName::Custom)
    return s.label();
  return {{"inner", inner_key(s.inner)}, {"outer", outer_key(s.outer)}};
}

inline ScheduleSpec schedule_from_json(const json& j)
{
  if (j.is_string())
    return ScheduleSpec::parse(j.get<std::string>());
  return ScheduleSpec::custom(parse_inner(j.at("inner").get<std::string>()),
                              parse_outer(j.at("outer").get<std::string>()));
}

inline void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> keys)
{
  if (!j.is_object())
    throw ConfigError(where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* known : keys)
      ok = ok || k == known;
    if (!ok)
      throw ConfigError("unknown key '" + where + "." + k + "'");
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& slot)
{
  if (j.contains(key))
    slot = j.at(key).get<T>();
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c)
{
  json targets = json::array();
  for (auto t : c.targets)
    targets.push_back(std::string(domain_key(t)));
  json schedules = json::array();
  for (const auto& s : c.schedules)
    schedules.push_back(detail::schedule_to_json(s));
  const auto& t = c.train;
  return {
      {"task",
       {{"targets", targets},
        {"n_per_domain", c.n_per_domain},
        {"seed", c.seed},
        {"repeats", c.repeats},
        {"glyphs", c.glyphs},
        {"glyph_size", c.glyph_size},
        {"max_len", c.max_len}}},
      {"model",
       {{"hidden", c.hidden},
        {"enc_hidden", c.enc_hidden},
        {"attn", c.attn},
        {"embed", c.embed},
        {"column_stride", c.column_stride}}},
      {"train",
       {{"alpha", t.alpha},
        {"beta", t.beta},
        {"gamma", t.gamma},
        {"warmup_gamma", c.warmup_gamma},
        {"batch_per_domain", t.batch_per_domain},
        {"warmup_iters", t.warmup_iters},
        {"total_iters", t.total_iters},
        {"tau", t.tau ? json(*t.tau) : json(nullptr)},
        {"pool_cap", t.pool_cap},
        {"refresh_interval", t.refresh_interval},
        {"score_budget", t.score_budget},
        {"split_ratio", t.split_ratio},
        {"second_order", t.second_order},
        {"second_order_limit", t.second_order_limit},
        {"eval_interval", t.eval_interval},
        {"step_decay", t.step_decay},
        {"confidence", t.confidence == ConfidenceMode::Min ? "min" : "product"}}},
      {"method", c.method},
      {"schedule", detail::schedule_to_json(c.schedule)},
      {"methods", c.methods},
      {"schedules", schedules},
      {"output_dir", c.output_dir},
  };
}

/// Missing keys keep their defaults; unknown keys and ill-typed values throw ConfigError.
inline ExperimentConfig config_from_json(const json& j)
{
  ExperimentConfig c;
  try {
    detail::reject_unknown(j, "config", {"task", "model", "train", "method", "schedule", "methods", "schedules", "output_dir"});
    if (j.contains("task")) {
      const auto& t = j.at("task");
      detail::reject_unknown(t, "task", {"targets", "n_per_domain", "seed", "repeats", "glyphs", "glyph_size", "max_len"});
      if (t.contains("targets")) {
        c.targets.clear();
        for (const auto& name : t.at("targets"))
          c.targets.push_back(parse_domain(name.get<std::string>()));
      }
      detail::read_opt(t, "n_per_domain", c.n_per_domain);
      detail::read_opt(t, "seed", c.seed);
      detail::read_opt(t, "repeats", c.repeats);
      detail::read_opt(t, "glyphs", c.glyphs);
      detail::read_opt(t, "glyph_size", c.glyph_size);
      detail::read_opt(t, "max_len", c.max_len);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      detail::reject_unknown(m, "model", {"hidden", "enc_hidden", "attn", "embed", "column_stride"});
      detail::read_opt(m, "hidden", c.hidden);
      detail::read_opt(m, "enc_hidden", c.enc_hidden);
      detail::read_opt(m, "attn", c.attn);
      detail::read_opt(m, "embed", c.embed);
      detail::read_opt(m, "column_stride", c.column_stride);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::reject_unknown(t, "train",
                             {"alpha", "beta", "gamma", "warmup_gamma", "batch_per_domain", "warmup_iters", "total_iters",
                              "tau", "pool_cap", "refresh_interval", "score_budget", "split_ratio", "second_order",
                              "second_order_limit", "eval_interval", "step_decay", "confidence"});
      auto& tc = c.train;
      detail::read_opt(t, "alpha", tc.alpha);
      detail::read_opt(t, "beta", tc.beta);
      detail::read_opt(t, "gamma", tc.gamma);
      detail::read_opt(t, "warmup_gamma", c.warmup_gamma);
      detail::read_opt(t, "batch_per_domain", tc.batch_per_domain);
      detail::read_opt(t, "warmup_iters", tc.warmup_iters);
      detail::read_opt(t, "total_iters", tc.total_iters);
      if (t.contains("tau")) {
        if (t.at("tau").is_null())
          tc.tau.reset();
        else
          tc.tau = t.at("tau").get<double>();
      }
      detail::read_opt(t, "pool_cap", tc.pool_cap);
      detail::read_opt(t, "refresh_interval", tc.refresh_interval);
      detail::read_opt(t, "score_budget", tc.score_budget);
      detail::read_opt(t, "split_ratio", tc.split_ratio);
      detail::read_opt(t, "second_order", tc.second_order);
      detail::read_opt(t, "second_order_limit", tc.second_order_limit);
      detail::read_opt(t, "eval_interval", tc.eval_interval);
      detail::read_opt(t, "step_decay", tc.step_decay);
      if (t.contains("confidence")) {
        const auto mode = t.at("confidence").get<std::string>();
        if (mode != "product" && mode != "min")
          throw ConfigError("train.confidence must be 'product' or 'min'");
        tc.confidence = mode == "min" ? ConfidenceMode::Min : ConfidenceMode::Product;
      }
    }
    detail::read_opt(j, "method", c.method);
    if (j.contains("schedule"))
      c.schedule = detail::schedule_from_json(j.at("schedule"));
    detail::read_opt(j, "methods", c.methods);
    if (j.contains("schedules")) {
      c.schedules.clear();
      for (const auto& s : j.at("schedules"))
        c.schedules.push_back(detail::schedule_from_json(s));
    }
    detail::read_opt(j, "output_dir", c.output_dir);
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const fs::path& p)
{
  std::ifstream is(p);
  if (!is)
    throw ConfigError("cannot read config " + p.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
  return config_from_json(j);
}

/// 64-bit FNV-1a of the canonical serialization, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c)
{
  const std::string s = to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// METASL_OUT, when set and non-empty, replaces the configured output_dir.
inline fs::path resolve_output_dir(const ExperimentConfig& c)
{
  if (const char* env = std::getenv("METASL_OUT"); env && *env)
    return env;
  return c.output_dir;
}

// ---------------------------------------------------------------- runs

/// A method as run by the trainer: a schedule plus an optional tau override.
struct MethodPlan {
  std::string method;
  ScheduleSpec schedule;
  std::optional<double> tau;

  /// "MetaSelfLearning/IPOA" etc.; baselines carry only their name.
  std::string label() const
  {
    return method == "MetaSelfLearning" ? method + "/" + schedule.label() : method;
  }
};

/// SourceOnly and PseudoOnly disable the meta step; MetaOnly is IAOS with an
/// unreachable threshold, so its pool stays empty.
inline MethodPlan plan_for(const std::string& method, const ScheduleSpec& schedule)
{
  if (method == "SourceOnly")
    return {method, ScheduleSpec::custom(InnerPolicy::Disabled, OuterPolicy::SourceOnly), std::nullopt};
  if (method == "PseudoOnly")
    return {method, ScheduleSpec::custom(InnerPolicy::Disabled, OuterPolicy::AllDomains), std::nullopt};
  if (method == "MetaOnly")
    return {method, ScheduleSpec::iaos(), 1.0};
  if (method == "MetaSelfLearning")
    return {method, schedule, std::nullopt};
  throw ConfigError("unknown method '" + method + "'");
}

inline std::vector<MethodPlan> benchmark_plans(const ExperimentConfig& c)
{
  std::vector<MethodPlan> plans;
  for (const auto& m : c.methods) {
    if (m == "MetaSelfLearning")
      for (const auto& s : c.schedules)
        plans.push_back(plan_for(m, s));
    else
      plans.push_back(plan_for(m, c.schedule));
  }
  return plans;
}

/// Mean pool accuracy over non-vacuous records in the second half of a run;
/// NaN when there are none.
inline double second_half_pool_accuracy(const std::vector<MetricsRecord>& log, std::size_t total_iters)
{
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : log)
    if (2 * r.iteration > total_iters && !r.pool_vacuous) {
      sum += r.pool_accuracy;
      ++n;
    }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

struct RunResult {
  std::string label;
  std::string method;
  std::string schedule;
  DomainName target = DomainName::PlateLike;
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
  double pool_accuracy = std::numeric_limits<double>::quiet_NaN();  // second half, non-vacuous records
  std::size_t final_pool = 0;
  double seconds = 0.0;
  std::string metrics_csv;
  std::vector<MetricsRecord> log;
};

/// Everything needed to run one method on one prepared task.
struct RunContext {
  const Task* task = nullptr;
  const ModelParams* init = nullptr;
  TrainConfig train;
  fs::path out_dir;  // empty: nothing written
  std::string config_hash;
};

inline std::string run_stem(const MethodPlan& plan, std::uint64_t seed)
{
  std::string stem = plan.method;
  if (plan.method == "MetaSelfLearning")
    stem += "-" + plan.schedule.label();
  return stem + "_s" + std::to_string(seed);
}

inline RunResult run_method(const RunContext& ctx, const MethodPlan& plan,
                            const std::function<void(const std::string&)>& on_event = {})
{
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig tc = ctx.train;
  if (plan.tau)
    tc.tau = plan.tau;
  TrainState state = make_state(*ctx.init, tc);
  TrainHooks hooks = task_hooks(*ctx.task);
  hooks.on_event = on_event;
  train(state, ctx.task->view, tc, plan.schedule, hooks);

  RunResult r;
  r.label = plan.label();
  r.method = plan.method;
  r.schedule = plan.schedule.label();
  r.target = ctx.task->view.target;
  r.seed = tc.seed;
  r.final_accuracy = state.log.empty() ? evaluate_accuracy(state.model, ctx.task->target_test)
                                       : state.log.back().target_test_accuracy;
  r.pool_accuracy = second_half_pool_accuracy(state.log, tc.total_iters);
  r.final_pool = state.pool.size();
  r.log = state.log;
  if (!ctx.out_dir.empty()) {
    const auto stem = run_stem(plan, tc.seed);
    const fs::path csv = ctx.out_dir / (stem + ".csv");
    write_metrics_csv(csv, state.log);
    r.metrics_csv = csv.string();
    std::ofstream pool(ctx.out_dir / (stem + "_pool.jsonl"));
    export_jsonl(state.pool, pool, &ctx.task->hidden_truth);
    save_checkpoint(ctx.out_dir / (stem + ".ckpt"), state.model, state.iteration, ctx.config_hash);
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Seeded model initialisation followed by warm-up on the task's sources.
inline ModelParams warm_model(const ExperimentConfig& c, const Task& task, std::uint64_t seed,
                              std::vector<double>* losses = nullptr)
{
  TrainConfig tc = c.train;
  tc.gamma = c.warmup_gamma;
  TrainState s = make_state(init_model(c.model(), seed), tc);
  auto l = warmup(s, task.view.sources, c.train.warmup_iters, c.train.batch_per_domain, seed, 100);
  if (losses)
    *losses = std::move(l);
  return s.model;
}

// ---------------------------------------------------------------- report

struct BenchmarkReport {
  std::string config_hash;
  std::size_t total_iters = 0;
  std::vector<DomainName> targets;
  std::vector<std::string> labels;  // run labels in plan order
  std::vector<RunResult> runs;
  double seconds = 0.0;

  std::vector<const RunResult*> select(const std::string& label, DomainName target) const
  {
    std::vector<const RunResult*> out;
    for (const auto& r : runs)
      if (r.label == label && r.target == target)
        out.push_back(&r);
    return out;
  }

  /// Seed-averaged final target-test accuracy; NaN if the cell is empty.
  double mean_accuracy(const std::string& label, DomainName target) const
  {
    const auto rs = select(label, target);
    if (rs.empty())
      return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (const auto* r : rs)
      s += r->final_accuracy;
    return s / static_cast<double>(rs.size());
  }

  /// Sample standard deviation of final accuracy over seeds; 0 for one seed.
  double stddev_accuracy(const std::string& label, DomainName target) const
  {
    const auto rs = select(label, target);
    if (rs.size() < 2)
      return rs.empty() ? std::numeric_limits<double>::quiet_NaN() : 0.0;
    const double mean = mean_accuracy(label, target);
    double ss = 0.0;
    for (const auto* r : rs)
      ss += (r->final_accuracy - mean) * (r->final_accuracy - mean);
    return std::sqrt(ss / static_cast<double>(rs.size() - 1));
  }

  /// Seed-averaged second-half pool accuracy over seeds where it is defined.
  double mean_pool_accuracy(const std::string& label, DomainName target) const
  {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto* r : select(label, target))
      if (!std::isnan(r->pool_accuracy)) {
        s += r->pool_accuracy;
        ++n;
      }
    return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  }

  std::vector<std::string> schedule_labels() const
  {
    std::vector<std::string> out;
    for (const auto& l : labels)
      if (l.rfind("MetaSelfLearning/", 0) == 0)
        out.push_back(l);
    return out;
  }

  /// Highest seed-averaged accuracy among the MetaSelfLearning schedules;
  /// earlier schedules win ties. Empty when no schedule ran.
  std::string best_schedule(DomainName target) const
  {
    std::string best;
    double best_acc = -1.0;
    for (const auto& l : schedule_labels()) {
      const double a = mean_accuracy(l, target);
      if (!std::isnan(a) && a > best_acc) {
        best_acc = a;
        best = l;
      }
    }
    return best;
  }

  /// Method-level accuracy: MetaSelfLearning resolves to the best schedule.
  double method_accuracy(const std::string& method, DomainName target) const
  {
    if (method == "MetaSelfLearning") {
      const auto b = best_schedule(target);
      return b.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_accuracy(b, target);
    }
    return mean_accuracy(method, target);
  }

  double method_pool_accuracy(const std::string& method, DomainName target) const
  {
    if (method == "MetaSelfLearning") {
      const auto b = best_schedule(target);
      return b.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_pool_accuracy(b, target);
    }
    return mean_pool_accuracy(method, target);
  }

  double method_mean(const std::string& method) const
  {
    double s = 0.0;
    for (auto t : targets)
      s += method_accuracy(method, t);
    return s / static_cast<double>(targets.size());
  }
};

inline json to_json(const BenchmarkReport& r)
{
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  json j;
  j["config_hash"] = r.config_hash;
  j["seconds"] = r.seconds;
  json table1 = json::object();
  for (const auto& m : method_names()) {
    json row = json::object();
    bool any = false;
    for (auto t : r.targets) {
      const double a = r.method_accuracy(m, t);
      any = any || !std::isnan(a);
      row[std::string(domain_key(t))] = num(a);
    }
    if (!any)
      continue;
    row["mean"] = num(r.method_mean(m));
    table1[m] = row;
  }
  j["methods"] = table1;
  json table2 = json::object();
  for (const auto& l : r.schedule_labels()) {
    json row = json::object();
    for (auto t : r.targets)
      row[std::string(domain_key(t))] = num(r.mean_accuracy(l, t));
    table2[l.substr(std::string("MetaSelfLearning/").size())] = row;
  }
  j["schedules"] = table2;
  json spread = json::object();
  for (const auto& l : r.labels) {
    json row = json::object();
    for (auto t : r.targets)
      row[std::string(domain_key(t))] = num(r.stddev_accuracy(l, t));
    spread[l] = row;
  }
  j["stddev"] = spread;
  json best = json::object();
  for (auto t : r.targets)
    best[std::string(domain_key(t))] = r.best_schedule(t);
  j["best_schedule"] = best;
  json pool = json::object();
  for (const auto& l : r.labels) {
    json row = json::object();
    for (auto t : r.targets)
      row[std::string(domain_key(t))] = num(r.mean_pool_accuracy(l, t));
    pool[l] = row;
  }
  j["pool_accuracy_second_half"] = pool;
  json runs = json::array();
  for (const auto& run : r.runs)
    runs.push_back({{"label", run.label},
                    {"target", std::string(domain_key(run.target))},
                    {"seed", run.seed},
                    {"final_accuracy", run.final_accuracy},
                    {"pool_accuracy_second_half", num(run.pool_accuracy)},
                    {"final_pool", run.final_pool},
                    {"seconds", run.seconds},
                    {"metrics_csv", run.metrics_csv}});
  j["runs"] = runs;
  return j;
}

/// Per-target pool-dynamics series: one row per recorded iteration per run.
inline void emit_curves(const BenchmarkReport& r, const fs::path& dir)
{
  for (auto t : r.targets) {
    auto os = detail::open_out(dir / ("curves_" + std::string(domain_key(t)) + ".csv"), false);
    os << "label,seed,iteration,pool_count,pool_accuracy,pool_vacuous_flag,target_test_accuracy\n";
    for (const auto& run : r.runs) {
      if (run.target != t)
        continue;
      for (const auto& m : run.log)
        os << run.label << ',' << run.seed << ',' << m.iteration << ',' << m.pool_count << ','
           << format_number(m.pool_accuracy) << ',' << (m.pool_vacuous ? 1 : 0) << ','
           << format_number(m.target_test_accuracy) << '\n';
    }
  }
}

/// Runs every planned method for every target and repeat. Each (target, seed)
/// shares one warm-up; every method then trains total_iters from it. With a
/// non-empty `out_dir` the metrics CSVs, pools, report and curves are written
/// under it.
inline BenchmarkReport run_benchmark(const ExperimentConfig& c, const fs::path& out_dir = {},
                                     const std::function<void(const std::string&)>& log = {})
{
  c.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto plans = benchmark_plans(c);
  BenchmarkReport rep;
  rep.config_hash = config_hash(c);
  rep.total_iters = c.train.total_iters;
  rep.targets = c.targets;
  for (const auto& p : plans)
    rep.labels.push_back(p.label());
  const GlyphWorld world = c.world();
  auto say = [&](const std::string& m) {
    if (log)
      log(m);
  };

  for (auto target : c.targets) {
    for (std::size_t k = 0; k < c.repeats; ++k) {
      const std::uint64_t seed = c.seed + k;
      const Task task = make_task(target, c.n_per_domain, seed, world);
      const ModelParams init = warm_model(c, task, seed);
      RunContext ctx;
      ctx.task = &task;
      ctx.init = &init;
      ctx.train = c.train;
      ctx.train.seed = seed;
      ctx.config_hash = rep.config_hash;
      if (!out_dir.empty()) {
        ctx.out_dir = out_dir / std::string(domain_key(target));
        save_checkpoint(ctx.out_dir / ("warmup_s" + std::to_string(seed) + ".ckpt"), init, 0, rep.config_hash);
      }
      for (const auto& plan : plans) {
        rep.runs.push_back(run_method(ctx, plan));
        const auto& r = rep.runs.back();
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-18s seed %-3llu %-28s acc %.3f  pool %4zu  %.1fs",
                      std::string(domain_key(target)).c_str(), static_cast<unsigned long long>(seed),
                      r.label.c_str(), r.final_accuracy, r.final_pool, r.seconds);
        say(buf);
      }
    }
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!out_dir.empty()) {
    auto os = detail::open_out(out_dir / "report.json", false);
    os << to_json(rep).dump(2) << '\n';
    emit_curves(rep, out_dir);
  }
  return rep;
}

}  // namespace metasl

#endif  // METASL_HARNESS_HPP
