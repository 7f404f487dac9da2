// Toy-scale attention sequence recognizer.
//
//   image -> windowed column MLP (width-3 convolution) -> BiLSTM (directions summed)
//         -> additive attention + LSTM decoder with teacher forcing -> per-step logits
//
// Batches are laid out time-major: row i*B + b of an encoded batch holds time
// step i of sample b, so one time step is a contiguous block of B rows.

#ifndef METASL_RECOGNIZER_HPP
#define METASL_RECOGNIZER_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "metasl/autodiff.hpp"
#include "metasl/core.hpp"
#include "metasl/optim.hpp"

namespace metasl {

struct ModelConfig {
  std::size_t image_height = 4;
  std::size_t image_width = 40;
  std::size_t glyphs = 16;
  std::size_t enc_hidden = 16;
  std::size_t hidden = 16;
  std::size_t attn = 16;
  std::size_t embed = 8;
  std::size_t max_steps = 11;  // decoder steps, EOS included
  std::size_t column_stride = 1;

  std::size_t steps() const { return image_width / column_stride; }
  std::size_t window() const { return 3 * column_stride * image_height; }

  Charset charset() const { return Charset(glyphs); }
  std::size_t vocab() const { return glyphs + 3; }
  std::size_t max_label() const { return max_steps - 1; }

  void validate() const
  {
    if (image_height == 0 || image_width == 0 || enc_hidden == 0 || hidden == 0 || attn == 0 || embed == 0)
      throw std::invalid_argument("model sizes must be positive");
    if (glyphs < 2)
      throw std::invalid_argument("model needs at least 2 glyphs");
    if (max_steps < 2)
      throw std::invalid_argument("max_steps must allow at least one glyph and EOS");
    if (column_stride == 0 || image_width % column_stride != 0)
      throw std::invalid_argument("image width must be a multiple of the column stride");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Every learnable tensor of the recognizer. theta's ordered entries are the
/// flat parameter vector the trainer updates.
struct ModelParams {
  ModelConfig config;
  ParamSet theta;
};

inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed)
{
  cfg.validate();
  std::mt19937_64 rng(derive_seed(seed, 0x6d6f64656cULL));
  auto uniform = [&](Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (auto& v : t.data())
      v = dist(rng);
    return t;
  };
  const std::size_t n = cfg.hidden;
  const std::size_t win = cfg.window();
  const double lstm_bound = 1.0 / std::sqrt(static_cast<double>(n));

  // Gate layout along the 4n axis: input, forget, output, candidate.
  auto lstm_bias = [&] {
    Tensor b({4 * n});
    for (std::size_t j = n; j < 2 * n; ++j)
      b[j] = 1.0;
    return b;
  };

  ModelParams m;
  m.config = cfg;
  auto& p = m.theta;
  p.add("enc.w1", uniform({win, cfg.enc_hidden}, 1.0 / std::sqrt(static_cast<double>(win))));
  p.add("enc.b1", Tensor({cfg.enc_hidden}));
  p.add("enc.w2", uniform({cfg.enc_hidden, cfg.enc_hidden}, 1.0 / std::sqrt(static_cast<double>(cfg.enc_hidden))));
  p.add("enc.b2", Tensor({cfg.enc_hidden}));
  p.add("fwd.w", uniform({cfg.enc_hidden + n, 4 * n}, lstm_bound));
  p.add("fwd.b", lstm_bias());
  p.add("bwd.w", uniform({cfg.enc_hidden + n, 4 * n}, lstm_bound));
  p.add("bwd.b", lstm_bias());
  p.add("attn.ws", uniform({n, cfg.attn}, lstm_bound));
  p.add("attn.wh", uniform({n, cfg.attn}, lstm_bound));
  p.add("attn.v", uniform({cfg.attn, 1}, 1.0 / std::sqrt(static_cast<double>(cfg.attn))));
  p.add("dec.w", uniform({cfg.embed + 2 * n, 4 * n}, lstm_bound));
  p.add("dec.b", lstm_bias());
  p.add("embed", uniform({cfg.vocab(), cfg.embed}, 1.0));
  p.add("out.w", uniform({n, cfg.vocab()}, lstm_bound));
  p.add("out.b", Tensor({cfg.vocab()}));
  return m;
}

/// Model parameters bound into one graph.
struct Bound {
  ad::Graph* g = nullptr;
  const ModelConfig* cfg = nullptr;
  ad::Var enc_w1, enc_b1, enc_w2, enc_b2;
  ad::Var fwd_w, fwd_b, bwd_w, bwd_b;
  ad::Var attn_ws, attn_wh, attn_v;
  ad::Var dec_w, dec_b, embed, out_w, out_b;
};

namespace detail {

template <class BindFn>
Bound bind_with(ad::Graph& g, const ModelParams& m, BindFn&& bind_one)
{
  Bound b;
  b.g = &g;
  b.cfg = &m.config;
  b.enc_w1 = bind_one("enc.w1");
  b.enc_b1 = bind_one("enc.b1");
  b.enc_w2 = bind_one("enc.w2");
  b.enc_b2 = bind_one("enc.b2");
  b.fwd_w = bind_one("fwd.w");
  b.fwd_b = bind_one("fwd.b");
  b.bwd_w = bind_one("bwd.w");
  b.bwd_b = bind_one("bwd.b");
  b.attn_ws = bind_one("attn.ws");
  b.attn_wh = bind_one("attn.wh");
  b.attn_v = bind_one("attn.v");
  b.dec_w = bind_one("dec.w");
  b.dec_b = bind_one("dec.b");
  b.embed = bind_one("embed");
  b.out_w = bind_one("out.w");
  b.out_b = bind_one("out.b");
  return b;
}

}  // namespace detail

/// Trainable binding: backward() accumulates into m.theta's gradients.
inline Bound bind(ad::Graph& g, ModelParams& m)
{
  return detail::bind_with(g, m, [&](const char* name) { return g.param(m.theta[name]); });
}

/// Read-only binding for inference.
inline Bound bind(ad::Graph& g, const ModelParams& m)
{
  return detail::bind_with(g, m, [&](const char* name) { return g.bind_const(m.theta[name]); });
}

struct LstmState {
  ad::Var h;
  ad::Var c;
};

/// One LSTM step on a batch. `x` is B x in, weights are (in + n) x 4n.
inline LstmState lstm_cell(ad::Graph& g, ad::Var x, const LstmState& prev, ad::Var w, ad::Var b, std::size_t n)
{
  auto gates = g.add_bias(g.matmul(g.concat({x, prev.h}), w), b);
  auto sig = g.sigmoid(g.slice(gates, 0, 3 * n));
  auto cand = g.tanh(g.slice(gates, 3 * n, 4 * n));
  auto in_gate = g.slice(sig, 0, n);
  auto forget = g.slice(sig, n, 2 * n);
  auto out_gate = g.slice(sig, 2 * n, 3 * n);
  auto c = g.add(g.mul(forget, prev.c), g.mul(in_gate, cand));
  auto h = g.mul(out_gate, g.tanh(c));
  return {h, c};
}

inline LstmState zero_state(ad::Graph& g, std::size_t batch, std::size_t n)
{
  auto z = g.constant(Tensor({batch, n}));
  return {z, z};
}

/// Encoder output for a batch: T*B x n features, plus W_h h precomputed once.
struct EncodedBatch {
  ad::Var features;
  ad::Var projected;
  std::size_t steps = 0;
  std::size_t batch = 0;
};

inline void check_geometry(const ModelConfig& cfg, const Image& img)
{
  if (img.height != cfg.image_height || img.width != cfg.image_width || img.pixels.size() != img.height * img.width)
    throw std::invalid_argument("image geometry " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                                " does not match model geometry " + std::to_string(cfg.image_height) + "x" +
                                std::to_string(cfg.image_width));
}

/// Zero-padded window of three adjacent column groups per time step,
/// time-major. A group is `column_stride` columns wide; step i is centred on
/// group i.
inline Tensor column_windows(const ModelConfig& cfg, std::span<const Image* const> images)
{
  const std::size_t B = images.size(), T = cfg.steps(), H = cfg.image_height, S = cfg.column_stride;
  const auto W = static_cast<std::ptrdiff_t>(cfg.image_width);
  Tensor x({T * B, cfg.window()});
  for (std::size_t b = 0; b < B; ++b) {
    const Image& img = *images[b];
    check_geometry(cfg, img);
    for (std::size_t i = 0; i < T; ++i) {
      double* row = x.data().data() + (i * B + b) * cfg.window();
      const std::ptrdiff_t first = static_cast<std::ptrdiff_t>(i * S) - static_cast<std::ptrdiff_t>(S);
      for (std::size_t k = 0; k < 3 * S; ++k) {
        const std::ptrdiff_t col = first + static_cast<std::ptrdiff_t>(k);
        if (col < 0 || col >= W)
          continue;
        for (std::size_t r = 0; r < H; ++r)
          row[k * H + r] = img.at(r, static_cast<std::size_t>(col));
      }
    }
  }
  return x;
}

inline EncodedBatch encode(const Bound& m, std::span<const Image* const> images)
{
  if (images.empty())
    throw std::invalid_argument("encode: empty batch");
  ad::Graph& g = *m.g;
  const auto& cfg = *m.cfg;
  const std::size_t B = images.size(), T = cfg.steps(), n = cfg.hidden;

  auto x = g.constant(column_windows(cfg, images));
  auto e1 = g.tanh(g.add_bias(g.matmul(x, m.enc_w1), m.enc_b1));
  auto cols = g.tanh(g.add_bias(g.matmul(e1, m.enc_w2), m.enc_b2));

  std::vector<ad::Var> fwd(T), bwd(T);
  LstmState sf = zero_state(g, B, n);
  for (std::size_t i = 0; i < T; ++i) {
    sf = lstm_cell(g, g.slice_rows(cols, i * B, (i + 1) * B), sf, m.fwd_w, m.fwd_b, n);
    fwd[i] = sf.h;
  }
  LstmState sb = zero_state(g, B, n);
  for (std::size_t i = T; i-- > 0;) {
    sb = lstm_cell(g, g.slice_rows(cols, i * B, (i + 1) * B), sb, m.bwd_w, m.bwd_b, n);
    bwd[i] = sb.h;
  }
  std::vector<ad::Var> steps(T);
  for (std::size_t i = 0; i < T; ++i)
    steps[i] = g.add(fwd[i], bwd[i]);

  EncodedBatch enc;
  enc.features = g.concat_rows(steps);
  enc.projected = g.matmul(enc.features, m.attn_wh);
  enc.steps = T;
  enc.batch = B;
  return enc;
}

struct Attention {
  ad::Var context;  // B x n
  ad::Var alpha;    // B x T
};

/// score_i = v . tanh(W_s s + W_h h_i); alpha = softmax(score); c = sum_i alpha_i h_i.
inline Attention attend(const Bound& m, ad::Var s_prev, const EncodedBatch& enc)
{
  ad::Graph& g = *m.g;
  const std::size_t B = enc.batch, T = enc.steps, n = m.cfg->hidden;
  const auto& s_shape = g.value(s_prev).shape();
  if (s_shape.size() != 2 || s_shape[0] != B || s_shape[1] != n)
    throw ad::ShapeError("attend: decoder state " + ad::shape_str(s_shape) + " does not match batch " +
                         std::to_string(B) + " x hidden " + std::to_string(n));

  std::vector<std::size_t> tile(T * B);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t b = 0; b < B; ++b)
      tile[i * B + b] = b;

  auto ws = g.gather(g.matmul(s_prev, m.attn_ws), std::move(tile));
  auto score = g.matmul(g.tanh(g.add(ws, enc.projected)), m.attn_v);  // T*B x 1
  auto alpha = g.softmax(g.transpose(g.reshape(score, {T, B})));      // B x T
  auto weights = g.reshape(g.transpose(alpha), {T * B});
  auto weighted = g.reshape(g.row_scale(enc.features, weights), {T, B * n});
  auto context = g.reshape(g.sum_axis0(weighted), {B, n});
  return {context, alpha};
}

struct StepOutput {
  ad::Var logits;  // B x vocab
  LstmState state;
};

/// s_t = LSTM([embed(g_{t-1}), c_t], s_{t-1}); logits = out(s_t).
inline StepOutput decode_step(const Bound& m, std::span<const Token> prev_tokens, const LstmState& state,
                              ad::Var context)
{
  ad::Graph& g = *m.g;
  const auto& cfg = *m.cfg;
  std::vector<std::size_t> ids(prev_tokens.size());
  for (std::size_t b = 0; b < prev_tokens.size(); ++b) {
    if (prev_tokens[b] < 0 || static_cast<std::size_t>(prev_tokens[b]) >= cfg.vocab())
      throw std::invalid_argument("decode_step: invalid token id " + std::to_string(prev_tokens[b]));
    ids[b] = static_cast<std::size_t>(prev_tokens[b]);
  }
  auto emb = g.gather(m.embed, std::move(ids));
  auto next = lstm_cell(g, g.concat({emb, context}), state, m.dec_w, m.dec_b, cfg.hidden);
  auto logits = g.add_bias(g.matmul(next.h, m.out_w), m.out_b);
  return {logits, next};
}

struct SampleRef {
  const Image* image = nullptr;
  const TokenSeq* label = nullptr;
};

inline void check_label(const ModelConfig& cfg, const TokenSeq& label)
{
  if (label.empty())
    throw std::invalid_argument("sequence_loss: empty label");
  if (label.size() > cfg.max_label())
    throw std::invalid_argument("sequence_loss: label of length " + std::to_string(label.size()) +
                                " exceeds max " + std::to_string(cfg.max_label()));
  const Charset cs = cfg.charset();
  for (Token t : label)
    if (!cs.is_glyph(t))
      throw std::invalid_argument("sequence_loss: token " + std::to_string(t) + " is not a glyph");
}

/// Mean over the batch of the summed per-step cross-entropy under teacher
/// forcing. Labels are glyph sequences; EOS is appended as the final target.
inline ad::Var sequence_loss(const Bound& m, std::span<const SampleRef> batch)
{
  if (batch.empty())
    throw std::invalid_argument("sequence_loss: empty batch");
  ad::Graph& g = *m.g;
  const auto& cfg = *m.cfg;
  const Charset cs = cfg.charset();
  const std::size_t B = batch.size(), V = cfg.vocab();

  std::vector<const Image*> images(B);
  std::size_t steps = 0;
  for (std::size_t b = 0; b < B; ++b) {
    check_label(cfg, *batch[b].label);
    images[b] = batch[b].image;
    steps = std::max(steps, batch[b].label->size() + 1);
  }

  auto enc = encode(m, images);
  LstmState state = zero_state(g, B, cfg.hidden);
  std::vector<Token> prev(B, cs.go());
  ad::Var total;
  for (std::size_t t = 0; t < steps; ++t) {
    auto att = attend(m, state.h, enc);
    auto out = decode_step(m, prev, state, att.context);
    state = out.state;

    Tensor pick({B, V});
    for (std::size_t b = 0; b < B; ++b) {
      const TokenSeq& label = *batch[b].label;
      if (t > label.size()) {
        prev[b] = cs.pad();
        continue;
      }
      const Token target = t < label.size() ? label[t] : cs.eos();
      pick[b * V + static_cast<std::size_t>(target)] = 1.0;
      prev[b] = target;
    }
    auto step_ll = g.sum(g.mul(g.log_softmax(out.logits), g.constant(std::move(pick))));
    total = total.valid() ? g.add(total, step_ll) : step_ll;
  }
  return g.scale(total, -1.0 / static_cast<double>(B));
}

/// Loss value; gradients of every theta entry are overwritten with d loss / d theta.
inline double loss_and_grad(ModelParams& m, std::span<const SampleRef> batch)
{
  m.theta.zero_grad();
  ad::Graph g;
  auto loss = sequence_loss(bind(g, m), batch);
  g.backward(loss);
  return g.value(loss).item();
}

inline double batch_loss(const ModelParams& m, std::span<const SampleRef> batch)
{
  ad::Graph g;
  return g.value(sequence_loss(bind(g, m), batch)).item();
}

inline double sequence_loss(const Image& image, const TokenSeq& label, const ModelParams& m)
{
  SampleRef one{&image, &label};
  return batch_loss(m, std::span<const SampleRef>(&one, 1));
}

/// T x n encoder features of a single image.
inline Tensor encode(const Image& image, const ModelParams& m)
{
  ad::Graph g;
  const Image* one = &image;
  auto enc = encode(bind(g, m), std::span<const Image* const>(&one, 1));
  return g.value(enc.features);
}

enum class ConfidenceMode { Product, Min };

struct Decoded {
  TokenSeq label;
  double confidence = 0.0;
};

/// Greedy autoregressive decoding from GO until EOS or max_steps. Confidence
/// aggregates the max softmax probability of every emitted step, EOS included.
inline std::vector<Decoded> greedy_decode(const ModelParams& m, std::span<const Image* const> images,
                                          std::size_t max_steps, ConfidenceMode mode = ConfidenceMode::Product)
{
  if (max_steps < 1)
    throw std::invalid_argument("greedy_decode: max_steps must be >= 1");
  std::vector<Decoded> out(images.size());
  if (images.empty())
    return out;
  const auto& cfg = m.config;
  const Charset cs = cfg.charset();
  const std::size_t B = images.size(), V = cfg.vocab();

  ad::Graph g;
  Bound bm = bind(g, m);
  auto enc = encode(bm, images);
  LstmState state = zero_state(g, B, cfg.hidden);
  std::vector<Token> prev(B, cs.go());
  std::vector<bool> done(B, false);
  for (auto& d : out)
    d.confidence = 1.0;

  for (std::size_t t = 0; t < max_steps; ++t) {
    auto att = attend(bm, state.h, enc);
    auto step = decode_step(bm, prev, state, att.context);
    state = step.state;
    const Tensor& logits = g.value(step.logits);
    bool all_done = true;
    for (std::size_t b = 0; b < B; ++b) {
      if (done[b])
        continue;
      const double* row = logits.data().data() + b * V;
      const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + V) - row);
      double z = 0.0;
      for (std::size_t j = 0; j < V; ++j)
        z += std::exp(row[j] - row[arg]);
      const double p = 1.0 / z;
      out[b].confidence = mode == ConfidenceMode::Product ? out[b].confidence * p : std::min(out[b].confidence, p);
      const Token tok = static_cast<Token>(arg);
      if (tok == cs.eos()) {
        done[b] = true;
      } else {
        out[b].label.push_back(tok);
        all_done = false;
      }
      prev[b] = tok;
    }
    if (all_done)
      break;
  }
  return out;
}

inline Decoded greedy_decode(const Image& image, const ModelParams& m, std::size_t max_steps,
                             ConfidenceMode mode = ConfidenceMode::Product)
{
  const Image* one = &image;
  return greedy_decode(m, std::span<const Image* const>(&one, 1), max_steps, mode).front();
}

/// Fraction of exact sequence matches.
inline double sequence_accuracy(const std::vector<TokenSeq>& predictions, const std::vector<TokenSeq>& truths)
{
  if (predictions.size() != truths.size())
    throw std::invalid_argument("sequence_accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(truths.size()) + " truths");
  if (predictions.empty())
    return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    hits += predictions[i] == truths[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

}  // namespace metasl

#endif  // METASL_RECOGNIZER_HPP
