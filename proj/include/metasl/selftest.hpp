// Built-in verification suite: gradient checks, the meta-step identities,
// attention invariants and pseudo-pool laws. Used by `metasl selftest`, the
// acceptance binary and the unit tests.

#ifndef METASL_SELFTEST_HPP
#define METASL_SELFTEST_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "metasl/domains.hpp"
#include "metasl/gradcheck.hpp"
#include "metasl/meta.hpp"
#include "metasl/pseudo.hpp"
#include "metasl/recognizer.hpp"

namespace metasl {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

namespace detail {

inline std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0)
{
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

template <class Fn>
CheckResult timed(const std::string& name, Fn&& fn)
{
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = fn();
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// hidden 4, K 4, three 3x3 glyphs per image.
inline ModelConfig tiny_model_config()
{
  ModelConfig c;
  c.image_height = 3;
  c.image_width = 9;
  c.glyphs = 4;
  c.enc_hidden = 4;
  c.hidden = 4;
  c.attn = 4;
  c.embed = 3;
  c.max_steps = 4;
  return c;
}

struct TinyBatch {
  std::vector<Image> images;
  std::vector<TokenSeq> labels;
  std::vector<SampleRef> refs;
};

inline TinyBatch tiny_batch(const ModelConfig& cfg, std::size_t n, std::mt19937_64& rng)
{
  TinyBatch b;
  std::uniform_real_distribution<double> px(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> len(1, cfg.max_label());
  std::uniform_int_distribution<int> tok(0, static_cast<int>(cfg.glyphs) - 1);
  for (std::size_t i = 0; i < n; ++i) {
    Image img(cfg.image_height, cfg.image_width);
    for (auto& p : img.pixels)
      p = px(rng);
    TokenSeq l(len(rng));
    for (auto& t : l)
      t = tok(rng);
    b.images.push_back(std::move(img));
    b.labels.push_back(std::move(l));
  }
  for (std::size_t i = 0; i < n; ++i)
    b.refs.push_back({&b.images[i], &b.labels[i]});
  return b;
}

// Small regression net used where the recognizer is too large for exact mode.
struct MlpTask {
  ParamSet theta;
  Tensor x_a, y_a, x_b, y_b;
};

inline MlpTask mlp_task(std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto rnd = [&](Shape s, double scale) {
    Tensor t(std::move(s));
    for (auto& v : t.data())
      v = scale * n01(rng);
    return t;
  };
  MlpTask t;
  t.theta.add("w1", rnd({4, 12}, 0.5));
  t.theta.add("b1", rnd({12}, 0.1));
  t.theta.add("w2", rnd({12, 6}, 0.3));
  t.theta.add("b2", rnd({6}, 0.1));
  t.theta.add("w3", rnd({6, 2}, 0.3));
  t.x_a = rnd({16, 4}, 1.0);
  t.y_a = rnd({16, 2}, 1.0);
  t.x_b = rnd({16, 4}, 1.0);
  t.y_b = rnd({16, 2}, 1.0);
  return t;
}

inline double mlp_loss_grad(ParamSet& p, const Tensor& x, const Tensor& y)
{
  p.zero_grad();
  ad::Graph g;
  auto h = g.tanh(g.add_bias(g.matmul(g.constant(x), g.param(p["w1"])), g.param(p["b1"])));
  h = g.tanh(g.add_bias(g.matmul(h, g.param(p["w2"])), g.param(p["b2"])));
  auto d = g.sub(g.matmul(h, g.param(p["w3"])), g.constant(y));
  auto loss = g.mean(g.mul(d, d));
  g.backward(loss);
  return g.value(loss).item();
}

// Batches for the generic meta step are just selectors: 0 = task a, 1 = task b.
inline double mlp_selector_loss(MlpTask& task, ParamSet& p, int which)
{
  return which == 0 ? mlp_loss_grad(p, task.x_a, task.y_a) : mlp_loss_grad(p, task.x_b, task.y_b);
}

}  // namespace detail

/// Every recognizer parameter group of a tiny model against central differences.
inline CheckResult check_gradients(std::uint64_t seed = 1, double tol = 1e-4)
{
  return detail::timed("gradient check (tiny recognizer)", [&] {
    const ModelConfig cfg = detail::tiny_model_config();
    ModelParams m = init_model(cfg, seed);
    std::mt19937_64 rng(derive_seed(seed, 17));
    const auto batch = detail::tiny_batch(cfg, 3, rng);
    const auto report = grad_check_params(m.theta, [&](ad::Graph& g) { return sequence_loss(bind(g, m), batch.refs); });
    double worst = 0.0;
    std::string where;
    for (const auto& e : report)
      if (e.max_rel_error >= worst) {
        worst = e.max_rel_error;
        where = e.name;
      }
    CheckResult r;
    r.pass = worst < tol;
    r.detail = detail::fmt("max rel error %.3g over %g groups", worst, static_cast<double>(report.size())) +
               " (worst " + where + ")";
    return r;
  });
}

/// l_a = l_b = theta^2/2, theta = 1, alpha = beta = 0.1.
inline double quadratic_meta_step(bool second_order)
{
  ParamSet p;
  p.add("theta", Tensor::scalar(1.0));
  auto loss_grad = [](ParamSet& q, int) {
    const double t = q["theta"][0];
    q.zero_grad();
    q["theta"].grad_buffer()[0] = t;
    return 0.5 * t * t;
  };
  auto opt = OptimizerState::sgd(0.1);
  meta_step(p, opt, 0, 1, 0.1, second_order, loss_grad);
  return p["theta"][0];
}

/// First-order meta step on the tiny recognizer versus an independent
/// two-evaluation computation, plus the quadratic closed form.
inline CheckResult check_fomaml_identity(std::uint64_t seed = 1, double tol = 1e-12)
{
  return detail::timed("first-order meta step identity", [&] {
    const ModelConfig cfg = detail::tiny_model_config();
    std::mt19937_64 rng(derive_seed(seed, 23));
    const auto a = detail::tiny_batch(cfg, 4, rng);
    const auto b = detail::tiny_batch(cfg, 4, rng);
    const double alpha = 0.05, beta = 0.1;
    auto lg = [](ModelParams& m, const std::vector<SampleRef>& batch) { return loss_and_grad(m, batch); };

    ModelParams model = init_model(cfg, seed);
    const std::vector<double> theta0 = model.theta.flatten();

    // Independent: theta' = theta - alpha grad l_a(theta); expected = theta - beta grad l_b(theta').
    ModelParams probe = model;
    loss_and_grad(probe, a.refs);
    const auto ga = flatten(probe.theta.gradients());
    std::vector<double> adapted(theta0);
    for (std::size_t i = 0; i < adapted.size(); ++i)
      adapted[i] -= alpha * ga[i];
    probe.theta.assign_flat(adapted);
    loss_and_grad(probe, b.refs);
    const auto gb = flatten(probe.theta.gradients());

    auto opt = OptimizerState::sgd(beta);
    meta_step(model, opt, a.refs, b.refs, alpha, false, lg);
    const auto theta1 = model.theta.flatten();
    double worst = 0.0;
    for (std::size_t i = 0; i < theta1.size(); ++i)
      worst = std::max(worst, std::abs((theta1[i] - theta0[i]) - (-beta * gb[i])));

    const double q = quadratic_meta_step(false);
    CheckResult r;
    r.pass = worst <= tol && q == 1.0 - 0.1 * 0.9 && std::abs(q - 0.91) < 1e-15;
    r.detail = detail::fmt("max |delta + beta g| = %.3g; quadratic 1 -> %.17g", worst, q);
    return r;
  });
}

struct SecondOrderProbe {
  double alpha = 0.0;
  double gap_over_alpha = 0.0;  // |g_exact - g_fo| / alpha
  double fd_mismatch = 0.0;     // |g_exact - finite-difference composite gradient| / |g_exact|
};

/// Exact-mode gradient versus first-order on a small regression net for one alpha.
inline SecondOrderProbe probe_second_order(std::uint64_t seed, double alpha)
{
  auto task = detail::mlp_task(seed);
  auto lg = [&task](ParamSet& p, int which) { return detail::mlp_selector_loss(task, p, which); };
  SecondOrderProbe out;
  out.alpha = alpha;

  ParamSet fo = task.theta, ex = task.theta;
  auto huge = OptimizerState::sgd(1.0);
  const auto r_fo = meta_step(fo, huge, 0, 1, alpha, false, lg);
  const auto r_ex = meta_step(ex, huge, 0, 1, alpha, true, lg);
  const auto g_fo = flatten(r_fo.update), g_ex = flatten(r_ex.update);
  double gap = 0.0;
  for (std::size_t i = 0; i < g_fo.size(); ++i)
    gap += (g_ex[i] - g_fo[i]) * (g_ex[i] - g_fo[i]);
  out.gap_over_alpha = std::sqrt(gap) / alpha;

  // Oracle: d/dtheta l_b(theta - alpha grad l_a(theta)) by central differences.
  const auto base = task.theta.flatten();
  auto composite = [&](const std::vector<double>& th) {
    ParamSet p = task.theta;
    p.assign_flat(th);
    detail::mlp_selector_loss(task, p, 0);
    const auto ga = flatten(p.gradients());
    std::vector<double> ad(th);
    for (std::size_t i = 0; i < ad.size(); ++i)
      ad[i] -= alpha * ga[i];
    p.assign_flat(ad);
    return detail::mlp_selector_loss(task, p, 1);
  };
  const double h = 1e-5;
  double err = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (composite(plus) - composite(minus)) / (2.0 * h);
    err += (fd - g_ex[i]) * (fd - g_ex[i]);
    norm += g_ex[i] * g_ex[i];
  }
  out.fd_mismatch = std::sqrt(err / std::max(norm, 1e-300));
  return out;
}

inline CheckResult check_second_order(std::uint64_t seed = 1)
{
  return detail::timed("second-order oracle", [&] {
    const double q = quadratic_meta_step(true);
    std::vector<SecondOrderProbe> probes;
    for (double a : {1e-2, 1e-3, 1e-4})
      probes.push_back(probe_second_order(seed, a));
    double lo = probes[0].gap_over_alpha, hi = lo, fd = 0.0;
    for (const auto& p : probes) {
      lo = std::min(lo, p.gap_over_alpha);
      hi = std::max(hi, p.gap_over_alpha);
      fd = std::max(fd, p.fd_mismatch);
    }
    CheckResult r;
    r.pass = std::abs(q - 0.919) < 1e-9 && lo > 0.0 && hi / lo <= 3.0 && fd < 1e-4;
    r.detail = detail::fmt("quadratic 1 -> %.12g; |g_exact-g_fo|/alpha spread %.4g", q, hi / lo) +
               detail::fmt(" (%.4g..%.4g); composite FD mismatch %.2g", lo, hi, fd) + " on " +
               std::to_string(detail::mlp_task(seed).theta.count()) + " params";
    return r;
  });
}

struct AttentionStats {
  double max_sum_error = 0.0;
  double min_alpha = 1.0;
  double max_context_error = 0.0;
};

/// Random decoder states and encoder features; alpha and c_t re-derived by hand.
inline AttentionStats attention_invariants(std::size_t instances, std::uint64_t seed)
{
  AttentionStats st;
  std::mt19937_64 rng(derive_seed(seed, 31));
  std::uniform_int_distribution<std::size_t> dim(1, 6);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t k = 0; k < instances; ++k) {
    ModelConfig cfg = detail::tiny_model_config();
    cfg.hidden = dim(rng);
    cfg.attn = dim(rng);
    const std::size_t B = dim(rng), T = dim(rng) + 1, n = cfg.hidden;
    const ModelParams m = init_model(cfg, rng());
    const double scale = 0.5 + 3.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    Tensor feats({T * B, n}), s({B, n});
    for (auto& v : feats.data())
      v = scale * n01(rng);
    for (auto& v : s.data())
      v = scale * n01(rng);

    ad::Graph g;
    const Bound bm = bind(g, m);
    EncodedBatch enc;
    enc.features = g.constant(feats);
    enc.projected = g.matmul(enc.features, bm.attn_wh);
    enc.steps = T;
    enc.batch = B;
    const auto att = attend(bm, g.constant(s), enc);
    const Tensor& alpha = g.value(att.alpha);
    const Tensor& ctx = g.value(att.context);

    const Tensor& ws = m.theta["attn.ws"];
    const Tensor& wh = m.theta["attn.wh"];
    const Tensor& v = m.theta["attn.v"];
    const std::size_t A = cfg.attn;
    for (std::size_t b = 0; b < B; ++b) {
      double sum = 0.0;
      for (std::size_t i = 0; i < T; ++i) {
        sum += alpha[b * T + i];
        st.min_alpha = std::min(st.min_alpha, alpha[b * T + i]);
      }
      st.max_sum_error = std::max(st.max_sum_error, std::abs(sum - 1.0));

      // Independent recomputation of scores, weights and the context.
      std::vector<double> score(T);
      for (std::size_t i = 0; i < T; ++i) {
        double sc = 0.0;
        for (std::size_t a = 0; a < A; ++a) {
          double z = 0.0;
          for (std::size_t j = 0; j < n; ++j)
            z += s[b * n + j] * ws[j * A + a] + feats[(i * B + b) * n + j] * wh[j * A + a];
          sc += v[a] * std::tanh(z);
        }
        score[i] = sc;
      }
      const double mx = *std::max_element(score.begin(), score.end());
      double z = 0.0;
      for (double x : score)
        z += std::exp(x - mx);
      for (std::size_t j = 0; j < n; ++j) {
        double c = 0.0, c_own = 0.0;
        for (std::size_t i = 0; i < T; ++i) {
          c += std::exp(score[i] - mx) / z * feats[(i * B + b) * n + j];
          c_own += alpha[b * T + i] * feats[(i * B + b) * n + j];
        }
        st.max_context_error = std::max({st.max_context_error, std::abs(ctx[b * n + j] - c),
                                         std::abs(ctx[b * n + j] - c_own)});
      }
    }
  }
  return st;
}

inline CheckResult check_attention(std::size_t instances = 1000, std::uint64_t seed = 1, double tol = 1e-12)
{
  return detail::timed("attention invariants", [&] {
    const auto st = attention_invariants(instances, seed);
    CheckResult r;
    r.pass = st.max_sum_error <= tol && st.min_alpha >= 0.0 && st.max_context_error <= tol;
    r.detail = detail::fmt("max |sum alpha - 1| %.3g, min alpha %.3g, max context error %.3g", st.max_sum_error,
                           st.min_alpha, st.max_context_error) +
               " over " + std::to_string(instances) + " instances";
    return r;
  });
}

struct PoolLawStats {
  std::size_t fixtures = 0;
  std::size_t monotone_violations = 0;
  std::size_t cap_violations = 0;
  std::size_t nonempty_at_one = 0;
  std::size_t nontrivial = 0;  // fixtures where the two thresholds admitted different sets
};

/// tau-monotonicity before the cap, cap dominance and the empty pool at tau = 1.
inline PoolLawStats pool_laws(std::size_t fixtures, std::uint64_t seed)
{
  PoolLawStats st;
  std::mt19937_64 rng(derive_seed(seed, 41));
  std::uniform_int_distribution<std::size_t> count(5, 40);
  std::uniform_int_distribution<std::size_t> cap_pick(0, 45);
  for (std::size_t f = 0; f < fixtures; ++f) {
    ModelConfig cfg = detail::tiny_model_config();
    ModelParams m = init_model(cfg, rng());
    // A few fitting steps on random labels: untrained decoders almost never
    // emit EOS, which would leave every pool empty.
    {
      const auto fit = detail::tiny_batch(cfg, 8, rng);
      auto opt = OptimizerState::adam(2e-2);
      const std::size_t steps = std::uniform_int_distribution<std::size_t>(5, 40)(rng);
      for (std::size_t k = 0; k < steps; ++k) {
        loss_and_grad(m, fit.refs);
        apply_update(m.theta, m.theta.gradients(), opt);
      }
    }
    const std::size_t n = count(rng);
    std::vector<UnlabeledImage> cands(n);
    std::uniform_real_distribution<double> px(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      cands[i].index = i;
      cands[i].image = Image(cfg.image_height, cfg.image_width);
      for (auto& p : cands[i].image.pixels)
        p = px(rng);
    }
    const auto scored = score_candidates(m, cands, 0, rng());

    // Thresholds drawn from the observed confidences make the comparison bite.
    std::vector<double> confs;
    for (const auto& s : scored)
      confs.push_back(s.confidence);
    std::uniform_int_distribution<std::size_t> pick(0, confs.size() - 1);
    double t1 = confs[pick(rng)] * px(rng), t2 = confs[pick(rng)];
    if (t1 > t2)
      std::swap(t1, t2);

    auto indices = [](const PseudoPool& p) {
      std::set<std::size_t> s;
      for (const auto& e : p.entries)
        s.insert(e.index);
      return s;
    };
    const auto p1 = admit(scored, cands, t1, n), p2 = admit(scored, cands, t2, n);
    const auto s1 = indices(p1), s2 = indices(p2);
    if (!std::includes(s1.begin(), s1.end(), s2.begin(), s2.end()))
      ++st.monotone_violations;
    if (s1 != s2)
      ++st.nontrivial;

    const std::size_t cap = cap_pick(rng);
    const auto pc = admit(scored, cands, t1, cap);
    bool ok = pc.size() == std::min(cap, p1.size());
    double kept_min = 2.0;
    for (const auto& e : pc.entries)
      kept_min = std::min(kept_min, e.confidence);
    const auto sc = indices(pc);
    for (const auto& e : p1.entries) {
      ok = ok && (e.confidence > t1);
      if (!sc.count(e.index))
        ok = ok && e.confidence <= kept_min;
    }
    if (!ok)
      ++st.cap_violations;

    if (!admit(scored, cands, 1.0, n).empty() || !regenerate(m, cands, 1.0, n, 0).empty())
      ++st.nonempty_at_one;
    ++st.fixtures;
  }
  return st;
}

inline CheckResult check_pool_laws(std::size_t fixtures = 100, std::uint64_t seed = 1)
{
  return detail::timed("pseudo-pool laws", [&] {
    const auto st = pool_laws(fixtures, seed);
    CheckResult r;
    r.pass = st.monotone_violations == 0 && st.cap_violations == 0 && st.nonempty_at_one == 0;
    r.detail = std::to_string(st.fixtures) + " fixtures: " + std::to_string(st.monotone_violations) +
               " monotonicity, " + std::to_string(st.cap_violations) + " cap, " + std::to_string(st.nonempty_at_one) +
               " tau=1 violations (" + std::to_string(st.nontrivial) + " with distinct pools)";
    return r;
  });
}

/// Full-batch supervised training on the first `n` training samples of one
/// domain; passes once every sample decodes exactly within `max_iters`.
inline CheckResult check_overfit(const ModelConfig& cfg, const GlyphWorld& world, DomainName domain,
                                 std::size_t n = 50, std::size_t max_iters = 2000, double gamma = 1e-2,
                                 std::uint64_t seed = 1)
{
  return detail::timed("overfit sanity", [&] {
    const auto ds = generate_domain(default_spec(domain), std::max<std::size_t>(n + n / 9 + 10, 10), seed, world);
    Batch batch;
    for (std::size_t i = 0; i < n && i < ds.train.size(); ++i)
      batch.push_back(&ds.train[i]);
    const std::span<const LabeledSample> subset(ds.train.data(), batch.size());
    TrainConfig tc;
    tc.gamma = gamma;
    TrainState s = make_state(init_model(cfg, seed), tc);
    double acc = 0.0, loss = 0.0;
    std::size_t it = 0;
    while (it < max_iters) {
      loss = outer_step(s.model, s.outer_opt, batch, recognizer_loss_grad);
      ++it;
      if (it % 50 == 0 || it == max_iters) {
        acc = evaluate_accuracy(s.model, subset);
        if (acc == 1.0)
          break;
      }
    }
    CheckResult r;
    r.pass = acc == 1.0 && batch.size() == n;
    r.detail = std::string(domain_key(domain)) + ", " + std::to_string(batch.size()) + " samples: exact match " +
               detail::fmt("%.3f", acc) + " after " + std::to_string(it) + " iterations (loss " +
               detail::fmt("%.2e", loss) + ")";
    return r;
  });
}

/// Checks run by `metasl selftest`.
inline std::vector<CheckResult> run_selftest(std::uint64_t seed = 1)
{
  return {check_gradients(seed), check_fomaml_identity(seed), check_second_order(seed), check_attention(1000, seed),
          check_pool_laws(100, seed)};
}

}  // namespace metasl

#endif  // METASL_SELFTEST_HPP
