// Shared value types: glyph-grid images, token sequences and the charset.

#ifndef METASL_CORE_HPP
#define METASL_CORE_HPP

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace metasl {

using Token = int;
using TokenSeq = std::vector<Token>;

/// Row-major H x W grid of intensities.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }

  bool operator==(const Image&) const = default;
};

/// Glyph ids 0..K-1 followed by GO, EOS, PAD.
class Charset {
 public:
  explicit Charset(std::size_t glyphs = 16) : glyphs_(glyphs)
  {
    if (glyphs < 2)
      throw std::invalid_argument("charset needs at least 2 glyphs");
  }

  std::size_t glyphs() const noexcept { return glyphs_; }
  std::size_t vocab() const noexcept { return glyphs_ + 3; }
  Token go() const noexcept { return static_cast<Token>(glyphs_); }
  Token eos() const noexcept { return static_cast<Token>(glyphs_ + 1); }
  Token pad() const noexcept { return static_cast<Token>(glyphs_ + 2); }

  bool is_glyph(Token t) const noexcept { return t >= 0 && static_cast<std::size_t>(t) < glyphs_; }
  bool is_valid(Token t) const noexcept { return t >= 0 && static_cast<std::size_t>(t) < vocab(); }

  bool operator==(const Charset&) const = default;

 private:
  std::size_t glyphs_;
};

inline std::string to_string(const TokenSeq& seq)
{
  std::string s;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i)
      s += ' ';
    s += std::to_string(seq[i]);
  }
  return s;
}

/// splitmix64 finalizer; used to derive independent RNG streams from a seed.
inline std::uint64_t mix_seed(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0)
{
  return mix_seed(mix_seed(mix_seed(seed ^ mix_seed(a)) ^ mix_seed(b + 0x1234)) ^ mix_seed(c + 0x5678));
}

}  // namespace metasl

#endif  // METASL_CORE_HPP
