// Small fixtures shared by the unit suites.

#pragma once

#include <random>
#include <vector>

#include "metasl/autodiff.hpp"
#include "metasl/domains.hpp"
#include "metasl/recognizer.hpp"

namespace testing_util {

inline metasl::Tensor random_tensor(metasl::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
  std::uniform_real_distribution<double> d(lo, hi);
  metasl::Tensor t(std::move(shape));
  for (auto& v : t.data())
    v = d(rng);
  return t;
}

// hidden <= 8, K <= 8, 3-glyph canvases of 3x3 glyphs.
inline metasl::ModelConfig tiny_config()
{
  metasl::ModelConfig c;
  c.image_height = 3;
  c.image_width = 9;
  c.glyphs = 4;
  c.enc_hidden = 4;
  c.hidden = 4;
  c.attn = 4;
  c.embed = 3;
  c.max_steps = 4;
  c.column_stride = 1;
  return c;
}

inline metasl::Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> d(0.0, 1.0);
  metasl::Image img(h, w);
  for (auto& p : img.pixels)
    p = d(rng);
  return img;
}

inline metasl::TokenSeq random_label(std::size_t len, std::size_t glyphs, std::mt19937_64& rng)
{
  std::uniform_int_distribution<int> d(0, static_cast<int>(glyphs) - 1);
  metasl::TokenSeq s(len);
  for (auto& t : s)
    t = d(rng);
  return s;
}

}  // namespace testing_util
