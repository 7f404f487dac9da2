// metasl: command-line front end.
//
// Exit status: 0 success, 2 bad flags or config, 1 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "metasl/harness.hpp"
#include "metasl/selftest.hpp"

using namespace metasl;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string schedule;
  std::string target;
  std::string out;
};

void add_common(CLI::App* cmd, Common& o, bool schedule, bool target)
{
  cmd->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "override task.seed");
  if (schedule)
    cmd->add_option("--schedule", o.schedule, "override schedule (IAOS, IAOA, IPOA, IPOP)");
  if (target)
    cmd->add_option("--target", o.target, "restrict to one target domain, e.g. document_like");
  cmd->add_option("--out", o.out, "output directory (METASL_OUT and output_dir otherwise)");
}

ExperimentConfig resolve(const Common& o)
{
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  try {
    if (o.seed)
      c.seed = *o.seed;
    if (!o.schedule.empty())
      c.schedule = ScheduleSpec::parse(o.schedule);
    if (!o.target.empty())
      c.targets = {parse_domain(o.target)};
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

fs::path out_dir(const Common& o, const ExperimentConfig& c)
{
  return o.out.empty() ? resolve_output_dir(c) : fs::path(o.out);
}

void say(const std::string& m)
{
  std::fprintf(stderr, "%s\n", m.c_str());
}

std::string cell(double v)
{
  char buf[32];
  if (std::isnan(v))
    return "    -  ";
  std::snprintf(buf, sizeof buf, "%7.3f", v);
  return buf;
}

void print_grid(const BenchmarkReport& rep, const std::vector<std::string>& rows, bool strip_prefix)
{
  std::printf("%-28s", "");
  for (auto t : rep.targets)
    std::printf(" %16s", std::string(domain_key(t)).c_str());
  std::printf(" %8s\n", "mean");
  for (const auto& l : rows) {
    std::string name = l;
    if (strip_prefix && name.rfind("MetaSelfLearning/", 0) == 0)
      name = name.substr(17);
    std::printf("%-28s", name.c_str());
    double s = 0.0;
    for (auto t : rep.targets) {
      const double a = rep.method_accuracy(l, t);
      s += a;
      std::printf("          %s", cell(a).c_str());
    }
    std::printf(" %s\n", cell(s / static_cast<double>(rep.targets.size())).c_str());
  }
}

int cmd_generate(const Common& o)
{
  const auto c = resolve(o);
  const auto dir = out_dir(o, c) / "data";
  const auto world = c.world();
  DatasetBundle b;
  b.glyphs = c.glyphs;
  b.glyph_size = c.glyph_size;
  b.max_len = c.max_len;
  b.seed = c.seed;
  for (auto d : kAllDomains)
    b.domains.push_back(
        generate_domain(default_spec(d), c.n_per_domain, derive_seed(c.seed, static_cast<std::uint64_t>(d)), world));
  save_dataset(dir, b);
  std::printf("%s\n", dir.string().c_str());
  return 0;
}

int cmd_warmup(const Common& o)
{
  const auto c = resolve(o);
  const auto dir = out_dir(o, c);
  const auto world = c.world();
  for (auto t : c.targets) {
    const Task task = make_task(t, c.n_per_domain, c.seed, world);
    std::vector<double> losses;
    const auto model = warm_model(c, task, c.seed, &losses);
    const auto path = dir / std::string(domain_key(t)) / ("warmup_s" + std::to_string(c.seed) + ".ckpt");
    save_checkpoint(path, model, c.train.warmup_iters, config_hash(c));
    std::printf("%s  loss %.4f -> %.4f  %s\n", std::string(domain_key(t)).c_str(), losses.empty() ? 0.0 : losses.front(),
                losses.empty() ? 0.0 : losses.back(), path.string().c_str());
  }
  return 0;
}

int cmd_train(const Common& o, const std::string& init)
{
  auto c = resolve(o);
  const auto dir = out_dir(o, c);
  const auto world = c.world();
  const MethodPlan plan = plan_for(c.method, c.schedule);
  BenchmarkReport rep;
  rep.config_hash = config_hash(c);
  rep.total_iters = c.train.total_iters;
  rep.targets = c.targets;
  rep.labels = {plan.label()};
  for (auto t : c.targets) {
    const Task task = make_task(t, c.n_per_domain, c.seed, world);
    ModelParams start;
    if (!init.empty()) {
      auto ck = load_checkpoint(init);
      if (ck.model.config != c.model())
        throw ConfigError(init + ": checkpoint model does not match the config");
      start = std::move(ck.model);
    } else {
      start = warm_model(c, task, c.seed);
    }
    RunContext ctx{&task, &start, c.train, dir / std::string(domain_key(t)), rep.config_hash};
    ctx.train.seed = c.seed;
    rep.runs.push_back(run_method(ctx, plan, say));
    const auto& r = rep.runs.back();
    std::printf("%s %s acc %.4f pool %zu -> %s\n", std::string(domain_key(t)).c_str(), r.label.c_str(),
                r.final_accuracy, r.final_pool, r.metrics_csv.c_str());
  }
  auto os = std::ofstream(dir / "report.json");
  if (!os)
    throw std::runtime_error("cannot write " + (dir / "report.json").string());
  os << to_json(rep).dump(2) << '\n';
  return 0;
}

int cmd_evaluate(const Common& o, const std::string& ckpt)
{
  const auto c = resolve(o);
  const auto ck = load_checkpoint(ckpt);
  const auto world = c.world();
  if (ck.model.config.image_width != world.width() || ck.model.config.image_height != world.height() ||
      ck.model.config.glyphs != c.glyphs)
    throw ConfigError(ckpt + ": checkpoint geometry does not match the config");
  nlohmann::json out;
  out["checkpoint"] = ckpt;
  out["iteration"] = ck.iteration;
  for (auto t : c.targets) {
    const Task task = make_task(t, c.n_per_domain, c.seed, world);
    out["accuracy"][std::string(domain_key(t))] = evaluate_accuracy(ck.model, task.target_test);
  }
  std::printf("%s\n", out.dump(2).c_str());
  return 0;
}

int cmd_ablate(const Common& o, bool baselines)
{
  auto c = resolve(o);
  if (!baselines)
    c.methods = {"MetaSelfLearning"};
  const auto dir = out_dir(o, c);
  const auto rep = run_benchmark(c, dir, say);
  std::printf("final target-test accuracy, mean of %zu seed(s)\n\n", c.repeats);
  std::vector<std::string> rows;
  for (const auto& m : c.methods)
    if (m != "MetaSelfLearning")
      rows.push_back(m);
  if (!rows.empty()) {
    rows.push_back("MetaSelfLearning");
    print_grid(rep, rows, false);
    std::printf("\n");
  }
  print_grid(rep, rep.schedule_labels(), true);
  std::printf("\nbest schedule:");
  for (auto t : rep.targets)
    std::printf(" %s=%s", std::string(domain_key(t)).c_str(), rep.best_schedule(t).substr(17).c_str());
  std::printf("\nreport: %s  (%.0f s)\n", (dir / "report.json").string().c_str(), rep.seconds);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tol)
{
  const auto r = check_gradients(seed, tol);
  std::printf("%s %s: %s (%.1f s)\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str(), r.seconds);
  return r.pass ? 0 : 1;
}

int cmd_selftest(std::uint64_t seed)
{
  bool ok = true;
  for (const auto& r : run_selftest(seed)) {
    std::printf("%s %s: %s (%.1f s)\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str(), r.seconds);
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Meta self-learning for multi-source domain adaptation on a toy sequence-recognition task"};
  app.require_subcommand(1);
  Common o;
  std::string init, ckpt;
  bool baselines = false;
  double tol = 1e-4;
  std::uint64_t check_seed = 1;

  auto* gen = app.add_subcommand("generate-data", "write the five-domain dataset");
  add_common(gen, o, false, false);
  auto* warm = app.add_subcommand("warmup", "source-only warm-up; writes a checkpoint per target");
  add_common(warm, o, false, true);
  auto* train = app.add_subcommand("train", "run one method/schedule; writes metrics CSV, pool, checkpoint, report");
  add_common(train, o, true, true);
  train->add_option("--init", init, "start from this checkpoint instead of warming up")->check(CLI::ExistingFile);
  auto* eval = app.add_subcommand("evaluate", "accuracy of a checkpoint on target test splits");
  add_common(eval, o, false, true);
  eval->add_option("--checkpoint", ckpt, "checkpoint path")->required()->check(CLI::ExistingFile);
  auto* ablate = app.add_subcommand("ablate", "schedules x targets x repeats grid");
  add_common(ablate, o, false, true);
  ablate->add_flag("--with-baselines", baselines, "also run the config's baseline methods");
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every recognizer parameter group");
  gc->add_option("--seed", check_seed, "model seed");
  gc->add_option("--tol", tol, "max relative error");
  auto* st = app.add_subcommand("selftest", "gradient checks, meta-step identities, attention and pool laws");
  st->add_option("--seed", check_seed, "fixture seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen)
      return cmd_generate(o);
    if (*warm)
      return cmd_warmup(o);
    if (*train)
      return cmd_train(o, init);
    if (*eval)
      return cmd_evaluate(o, ckpt);
    if (*ablate)
      return cmd_ablate(o, baselines);
    if (*gc)
      return cmd_gradcheck(check_seed, tol);
    if (*st)
      return cmd_selftest(check_seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
