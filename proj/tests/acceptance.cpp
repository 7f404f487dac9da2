// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//
//   acceptance --config examples/configs/acceptance.json --out build/acceptance_runs

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "metasl/harness.hpp"
#include "metasl/selftest.hpp"

using namespace metasl;

namespace {

std::vector<CheckResult> results;

void report(int id, CheckResult r)
{
  std::printf("%s [%d] %s: %s (%.1f s)\n", r.pass ? "PASS" : "FAIL", id, r.name.c_str(), r.detail.c_str(), r.seconds);
  std::fflush(stdout);
  results.push_back(std::move(r));
}

std::string slurp(const fs::path& p)
{
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string key(DomainName t)
{
  return std::string(domain_key(t));
}

void print_tables(const BenchmarkReport& rep)
{
  std::printf("\n%-24s", "");
  for (auto t : rep.targets)
    std::printf(" %15s", key(t).c_str());
  std::printf(" %8s\n", "mean");
  auto row = [&](const std::string& name, auto&& value, auto&& mean) {
    std::printf("%-24s", name.c_str());
    for (auto t : rep.targets)
      std::printf(" %15.3f", value(t));
    std::printf(" %8.3f\n", mean());
  };
  for (const auto* m : {"SourceOnly", "PseudoOnly", "MetaSelfLearning"})
    row(m, [&](DomainName t) { return rep.method_accuracy(m, t); }, [&] { return rep.method_mean(m); });
  for (const auto& l : rep.schedule_labels())
    row("  " + l.substr(17), [&](DomainName t) { return rep.mean_accuracy(l, t); },
        [&] {
          double s = 0.0;
          for (auto t : rep.targets)
            s += rep.mean_accuracy(l, t);
          return s / static_cast<double>(rep.targets.size());
        });
  std::printf("pool accuracy, second half\n");
  for (const auto* m : {"PseudoOnly", "MetaSelfLearning"})
    row(m, [&](DomainName t) { return rep.method_pool_accuracy(m, t); }, [] { return std::nan(""); });
  std::printf("\n");
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"acceptance criteria"};
  std::string config = "examples/configs/acceptance.json";
  std::string out = "acceptance_runs";
  std::uint64_t seed = 1;
  bool skip_benchmark = false;
  app.add_option("--config", config, "benchmark config")->check(CLI::ExistingFile);
  app.add_option("--out", out, "output directory");
  app.add_option("--seed", seed, "fixture seed for the property checks");
  app.add_flag("--skip-benchmark", skip_benchmark, "only the property checks");
  CLI11_PARSE(app, argc, argv);

  ExperimentConfig c;
  try {
    c = load_config(config);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }
  const fs::path root(out);

  // 1-5: property checks.
  report(1, check_gradients(seed, 1e-4));
  {
    auto r = results.back();
    if (r.seconds >= 60.0) {
      results.back().pass = false;
      std::printf("FAIL [1] gradient check exceeded 60 s\n");
    }
  }
  report(2, check_fomaml_identity(seed, 1e-12));
  report(3, check_second_order(seed));
  report(4, check_attention(1000, seed, 1e-12));
  report(5, check_pool_laws(100, seed));

  // 6-8: benchmark.
  if (!skip_benchmark) {
    BenchmarkReport rep;
    try {
      rep = run_benchmark(c, root / "benchmark", [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); });
    } catch (const std::exception& e) {
      std::fprintf(stderr, "benchmark failed: %s\n", e.what());
      return 1;
    }
    print_tables(rep);

    CheckResult r6;
    r6.name = "domain-shift ordering SourceOnly < PseudoOnly < MetaSelfLearning";
    r6.seconds = rep.seconds;
    std::size_t ordered = 0;
    std::string which;
    for (auto t : rep.targets) {
      const double so = rep.method_accuracy("SourceOnly", t), po = rep.method_accuracy("PseudoOnly", t),
                   msl = rep.method_accuracy("MetaSelfLearning", t);
      if (so < po && po < msl) {
        ++ordered;
        which += " " + key(t);
      }
    }
    const double mso = rep.method_mean("SourceOnly"), mpo = rep.method_mean("PseudoOnly"),
                 mmsl = rep.method_mean("MetaSelfLearning");
    const bool mean_ok = mso < mpo && mpo < mmsl;
    r6.pass = ordered >= 4 && mean_ok && rep.seconds < 1800.0 && c.repeats == 3 && rep.targets.size() == 5;
    r6.detail = std::to_string(ordered) + "/" + std::to_string(rep.targets.size()) + " targets ordered (" +
                (which.empty() ? std::string(" none") : which) + " ), mean " + detail::fmt("%.3f < %.3f < %.3f", mso, mpo, mmsl) +
                (mean_ok ? " holds" : " fails") + ", " + std::to_string(c.repeats) + " seeds, " +
                detail::fmt("%.0f s of 1800", rep.seconds);
    report(6, r6);

    CheckResult r7;
    r7.name = "no single schedule wins every target";
    std::set<std::string> winners;
    std::string list;
    for (auto t : rep.targets) {
      const auto b = rep.best_schedule(t);
      winners.insert(b);
      list += " " + key(t) + "=" + (b.size() > 17 ? b.substr(17) : b);
    }
    r7.pass = winners.size() >= 2 && rep.schedule_labels().size() >= 2;
    r7.detail = std::to_string(winners.size()) + " distinct winners:" + list;
    report(7, r7);

    CheckResult r8;
    r8.name = "second-half pool accuracy MetaSelfLearning > PseudoOnly";
    std::size_t better = 0;
    std::string cells;
    for (auto t : rep.targets) {
      const double po = rep.method_pool_accuracy("PseudoOnly", t), msl = rep.method_pool_accuracy("MetaSelfLearning", t);
      if (msl > po)
        ++better;
      cells += " " + key(t) + detail::fmt("=%.3f/%.3f", msl, po);
    }
    r8.pass = better >= 3;
    r8.detail = std::to_string(better) + "/" + std::to_string(rep.targets.size()) + " targets (msl/po):" + cells;
    report(8, r8);
  }

  // 9: determinism of the written CSV.
  {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig d = c;
    d.targets = {DomainName::SyntheticLike};
    d.repeats = 1;
    d.n_per_domain = 300;
    d.train.warmup_iters = 600;
    d.train.total_iters = 200;
    d.train.refresh_interval = 50;
    d.train.eval_interval = 50;
    d.methods = {"MetaSelfLearning"};
    d.schedules = {ScheduleSpec::ipoa()};
    d.train.tau = 0.0;  // any terminated decode enters the pool
    const auto a = run_benchmark(d, root / "determinism_a");
    const auto b = run_benchmark(d, root / "determinism_b");
    CheckResult r9;
    r9.name = "determinism";
    const std::string ca = slurp(a.runs.at(0).metrics_csv), cb = slurp(b.runs.at(0).metrics_csv);
    std::size_t pooled = 0;
    for (const auto& m : a.runs.at(0).log)
      pooled = std::max(pooled, m.pool_count);
    r9.pass = !ca.empty() && ca == cb && pooled > 0;
    r9.detail = std::to_string(ca.size()) + "-byte CSVs " + (ca == cb ? "identical" : "differ") + " (peak pool " +
                std::to_string(pooled) + ")";
    r9.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report(9, r9);
  }

  // 10: overfit at the benchmark geometry.
  report(10, check_overfit(c.model(), c.world(), DomainName::PlateLike, 50, 2000, 1e-2, seed));

  std::size_t failed = 0;
  for (const auto& r : results)
    failed += r.pass ? 0 : 1;
  std::printf("%zu/%zu criteria passed\n", results.size() - failed, results.size());
  return failed ? 1 : 0;
}
