// On-disk formats: dataset directories, parameter checkpoints, metrics CSV.

#ifndef METASL_IO_HPP
#define METASL_IO_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "metasl/domains.hpp"
#include "metasl/meta.hpp"
#include "metasl/recognizer.hpp"

namespace metasl {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

/// Raised for unreadable or malformed files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class T>
void put(std::ostream& os, T v)
{
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is, const std::string& what)
{
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw FormatError(what + ": truncated");
  return v;
}

inline std::ofstream open_out(const fs::path& p, bool binary)
{
  if (p.has_parent_path())
    fs::create_directories(p.parent_path());
  std::ofstream os(p, binary ? std::ios::binary : std::ios::out);
  if (!os)
    throw std::runtime_error("cannot write " + p.string());
  return os;
}

inline std::ifstream open_in(const fs::path& p, bool binary)
{
  std::ifstream is(p, binary ? std::ios::binary : std::ios::in);
  if (!is)
    throw FormatError("cannot read " + p.string());
  return is;
}

inline json read_json(const fs::path& p)
{
  auto is = open_in(p, false);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------- images

inline constexpr char kImageMagic[4] = {'M', 'S', 'L', 'I'};
inline constexpr std::uint32_t kImageVersion = 1;

/// 16-byte header (magic, u32 version, u32 count, u16 height, u16 width)
/// followed by count*height*width little-endian float64 pixels.
inline void write_images(const fs::path& p, const std::vector<const Image*>& images)
{
  std::uint16_t h = 0, w = 0;
  if (!images.empty()) {
    h = static_cast<std::uint16_t>(images[0]->height);
    w = static_cast<std::uint16_t>(images[0]->width);
  }
  for (const auto* img : images)
    if (img->height != h || img->width != w)
      throw std::invalid_argument("write_images: images differ in size");
  auto os = detail::open_out(p, true);
  os.write(kImageMagic, 4);
  detail::put<std::uint32_t>(os, kImageVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(images.size()));
  detail::put<std::uint16_t>(os, h);
  detail::put<std::uint16_t>(os, w);
  for (const auto* img : images)
    os.write(reinterpret_cast<const char*>(img->pixels.data()),
             static_cast<std::streamsize>(img->pixels.size() * sizeof(double)));
  if (!os)
    throw std::runtime_error("write failed: " + p.string());
}

inline std::vector<Image> read_images(const fs::path& p)
{
  auto is = detail::open_in(p, true);
  const std::string what = p.string();
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kImageMagic, 4) != 0)
    throw FormatError(what + ": bad magic");
  if (detail::get<std::uint32_t>(is, what) != kImageVersion)
    throw FormatError(what + ": unsupported version");
  const auto count = detail::get<std::uint32_t>(is, what);
  const auto h = detail::get<std::uint16_t>(is, what);
  const auto w = detail::get<std::uint16_t>(is, what);
  std::vector<Image> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Image img(h, w);
    if (!is.read(reinterpret_cast<char*>(img.pixels.data()),
                 static_cast<std::streamsize>(img.pixels.size() * sizeof(double))))
      throw FormatError(what + ": truncated pixel data");
    out.push_back(std::move(img));
  }
  return out;
}

inline void write_labels(const fs::path& p, const std::vector<const TokenSeq*>& labels)
{
  auto os = detail::open_out(p, false);
  for (const auto* l : labels)
    os << to_string(*l) << '\n';
}

inline std::vector<TokenSeq> read_labels(const fs::path& p)
{
  auto is = detail::open_in(p, false);
  std::vector<TokenSeq> out;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    TokenSeq seq;
    std::string tok;
    while (ls >> tok) {
      std::size_t used = 0;
      int v = 0;
      try {
        v = std::stoi(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size())
        throw FormatError(p.string() + ": bad token '" + tok + "'");
      seq.push_back(v);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

// ---------------------------------------------------------------- datasets

inline json spec_to_json(const DomainSpec& s)
{
  const char* kind = s.length.kind == LengthPolicy::Kind::Fixed     ? "fixed"
                     : s.length.kind == LengthPolicy::Kind::Uniform ? "uniform"
                                                                    : "plate_format";
  const auto& c = s.corruption;
  return {{"name", std::string(domain_key(s.name))},
          {"length", {{"kind", kind}, {"min", s.length.min}, {"max", s.length.max}}},
          {"corruption",
           {{"noise_std", c.noise_std},
            {"dropout_rate", c.dropout_rate},
            {"clutter_blocks", c.clutter_blocks},
            {"dilate", c.dilate},
            {"jitter_rate", c.jitter_rate},
            {"invert_rate", c.invert_rate}}},
          {"corpus", s.corpus == CorpusPolicy::Skewed ? "skewed" : "uniform"}};
}

inline DomainSpec spec_from_json(const json& j)
{
  DomainSpec s;
  s.name = parse_domain(j.at("name").get<std::string>());
  const auto& l = j.at("length");
  const auto kind = l.at("kind").get<std::string>();
  if (kind == "fixed")
    s.length = LengthPolicy::fixed(l.at("min").get<std::size_t>());
  else if (kind == "uniform")
    s.length = LengthPolicy::uniform(l.at("min").get<std::size_t>(), l.at("max").get<std::size_t>());
  else if (kind == "plate_format")
    s.length = LengthPolicy::plate_format();
  else
    throw FormatError("unknown length policy " + kind);
  const auto& c = j.at("corruption");
  s.corruption.noise_std = c.at("noise_std").get<double>();
  s.corruption.dropout_rate = c.at("dropout_rate").get<double>();
  s.corruption.clutter_blocks = c.at("clutter_blocks").get<std::size_t>();
  s.corruption.dilate = c.at("dilate").get<bool>();
  s.corruption.jitter_rate = c.at("jitter_rate").get<double>();
  s.corruption.invert_rate = c.at("invert_rate").get<double>();
  const auto corpus = j.at("corpus").get<std::string>();
  if (corpus != "uniform" && corpus != "skewed")
    throw FormatError("unknown corpus policy " + corpus);
  s.corpus = corpus == "skewed" ? CorpusPolicy::Skewed : CorpusPolicy::Uniform;
  return s;
}

struct DatasetBundle {
  std::size_t glyphs = 16;
  std::size_t glyph_size = 4;
  std::size_t max_len = 10;
  std::uint64_t seed = 0;
  std::vector<DomainDataset> domains;
};

/// Writes manifest.json plus <domain>.<split>.bin / .labels for every domain.
inline void save_dataset(const fs::path& dir, const DatasetBundle& bundle)
{
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "metasl-dataset";
  manifest["version"] = 1;
  manifest["charset"] = {{"glyphs", bundle.glyphs}, {"vocab", bundle.glyphs + 3}};
  manifest["glyph_size"] = bundle.glyph_size;
  manifest["max_len"] = bundle.max_len;
  manifest["seed"] = bundle.seed;
  manifest["domains"] = json::array();
  for (const auto& d : bundle.domains) {
    const std::string key(domain_key(d.spec.name));
    json entry{{"spec", spec_to_json(d.spec)}, {"seed", d.seed}};
    for (const auto* split : {"train", "test"}) {
      const auto& samples = std::string(split) == "train" ? d.train : d.test;
      std::vector<const Image*> images;
      std::vector<const TokenSeq*> labels;
      for (const auto& s : samples) {
        images.push_back(&s.image);
        labels.push_back(&s.label);
      }
      const std::string stem = key + "." + split;
      write_images(dir / (stem + ".bin"), images);
      write_labels(dir / (stem + ".labels"), labels);
      entry[split] = {{"count", samples.size()}, {"images", stem + ".bin"}, {"labels", stem + ".labels"}};
    }
    manifest["domains"].push_back(entry);
  }
  auto os = detail::open_out(dir / "manifest.json", false);
  os << manifest.dump(2) << '\n';
}

inline DatasetBundle load_dataset(const fs::path& dir)
{
  const json m = detail::read_json(dir / "manifest.json");
  try {
    if (m.at("format") != "metasl-dataset" || m.at("version") != 1)
      throw FormatError("unsupported dataset format");
    DatasetBundle b;
    b.glyphs = m.at("charset").at("glyphs").get<std::size_t>();
    b.glyph_size = m.at("glyph_size").get<std::size_t>();
    b.max_len = m.at("max_len").get<std::size_t>();
    b.seed = m.at("seed").get<std::uint64_t>();
    for (const auto& e : m.at("domains")) {
      DomainDataset d;
      d.spec = spec_from_json(e.at("spec"));
      d.seed = e.at("seed").get<std::uint64_t>();
      for (const auto* split : {"train", "test"}) {
        const auto& s = e.at(split);
        auto images = read_images(dir / s.at("images").get<std::string>());
        auto labels = read_labels(dir / s.at("labels").get<std::string>());
        const auto count = s.at("count").get<std::size_t>();
        if (images.size() != count || labels.size() != count)
          throw FormatError(std::string(domain_key(d.spec.name)) + "." + split + ": count mismatch");
        auto& out = std::string(split) == "train" ? d.train : d.test;
        for (std::size_t i = 0; i < count; ++i) {
          LabeledSample ls;
          ls.image = std::move(images[i]);
          ls.label = std::move(labels[i]);
          ls.domain = d.spec.name;
          ls.index = i;
          out.push_back(std::move(ls));
        }
      }
      b.domains.push_back(std::move(d));
    }
    return b;
  } catch (const json::exception& e) {
    throw FormatError((dir / "manifest.json").string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- checkpoints

inline json model_config_to_json(const ModelConfig& c)
{
  return {{"image_height", c.image_height}, {"image_width", c.image_width}, {"glyphs", c.glyphs},
          {"enc_hidden", c.enc_hidden},     {"hidden", c.hidden},           {"attn", c.attn},
          {"embed", c.embed},               {"max_steps", c.max_steps},     {"column_stride", c.column_stride}};
}

inline ModelConfig model_config_from_json(const json& j)
{
  ModelConfig c;
  const std::pair<const char*, std::size_t*> fields[] = {
      {"image_height", &c.image_height}, {"image_width", &c.image_width}, {"glyphs", &c.glyphs},
      {"enc_hidden", &c.enc_hidden},     {"hidden", &c.hidden},           {"attn", &c.attn},
      {"embed", &c.embed},               {"max_steps", &c.max_steps},     {"column_stride", &c.column_stride}};
  for (const auto& [key, slot] : fields)
    if (j.contains(key))
      *slot = j.at(key).get<std::size_t>();
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const auto& f : fields)
      known = known || key == f.first;
    if (!known)
      throw std::invalid_argument("model config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

struct Checkpoint {
  ModelParams model;
  std::size_t iteration = 0;
  std::string config_hash;
};

/// `<path>` holds the flat float64 parameter vector; `<path>.json` the names,
/// shapes, model config, iteration and config hash.
inline void save_checkpoint(const fs::path& path, const ModelParams& model, std::size_t iteration,
                            const std::string& config_hash)
{
  const auto flat = model.theta.flatten();
  {
    auto os = detail::open_out(path, true);
    os.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!os)
      throw std::runtime_error("write failed: " + path.string());
  }
  json side;
  side["format"] = "metasl-checkpoint";
  side["version"] = 1;
  side["model"] = model_config_to_json(model.config);
  side["iteration"] = iteration;
  side["config_hash"] = config_hash;
  side["count"] = flat.size();
  side["params"] = json::array();
  for (const auto& e : model.theta)
    side["params"].push_back({{"name", e.name}, {"shape", e.tensor.shape()}});
  auto os = detail::open_out(fs::path(path.string() + ".json"), false);
  os << side.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const fs::path& path)
{
  const json side = detail::read_json(fs::path(path.string() + ".json"));
  Checkpoint ck;
  try {
    if (side.at("format") != "metasl-checkpoint" || side.at("version") != 1)
      throw FormatError(path.string() + ": unsupported checkpoint format");
    ck.model = init_model(model_config_from_json(side.at("model")), 0);
    ck.iteration = side.at("iteration").get<std::size_t>();
    ck.config_hash = side.at("config_hash").get<std::string>();
    const auto& params = side.at("params");
    if (params.size() != ck.model.theta.groups())
      throw FormatError(path.string() + ": parameter groups do not match the model config");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& e = ck.model.theta.entry(i);
      if (params[i].at("name") != e.name || params[i].at("shape").get<Shape>() != e.tensor.shape())
        throw FormatError(path.string() + ": parameter '" + e.name + "' does not match the sidecar");
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ".json: " + e.what());
  }
  const std::size_t n = ck.model.theta.count();
  if (fs::file_size(path) != n * sizeof(double))
    throw FormatError(path.string() + ": expected " + std::to_string(n * sizeof(double)) + " bytes");
  std::vector<double> flat(n);
  auto is = detail::open_in(path, true);
  is.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is)
    throw FormatError(path.string() + ": truncated");
  ck.model.theta.assign_flat(flat);
  return ck;
}

// ---------------------------------------------------------------- metrics

inline std::string format_number(double v)
{
  if (std::isnan(v))
    return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline constexpr const char* kMetricsHeader =
    "iteration,l_a,l_b,outer_loss,pool_count,pool_accuracy,pool_vacuous_flag,target_test_accuracy";

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& log)
{
  os << kMetricsHeader << '\n';
  for (const auto& r : log)
    os << r.iteration << ',' << format_number(r.l_a) << ',' << format_number(r.l_b) << ','
       << format_number(r.outer_loss) << ',' << r.pool_count << ',' << format_number(r.pool_accuracy) << ','
       << (r.pool_vacuous ? 1 : 0) << ',' << format_number(r.target_test_accuracy) << '\n';
}

inline void write_metrics_csv(const fs::path& p, const std::vector<MetricsRecord>& log)
{
  auto os = detail::open_out(p, false);
  write_metrics_csv(os, log);
}

inline std::vector<MetricsRecord> read_metrics_csv(const fs::path& p)
{
  auto is = detail::open_in(p, false);
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader)
    throw FormatError(p.string() + ": unexpected header");
  std::vector<MetricsRecord> out;
  while (std::getline(is, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ','))
      f.push_back(cell);
    if (f.size() != 8)
      throw FormatError(p.string() + ": expected 8 columns in '" + line + "'");
    MetricsRecord r;
    try {
      r.iteration = std::stoull(f[0]);
      r.l_a = std::stod(f[1]);
      r.l_b = std::stod(f[2]);
      r.outer_loss = std::stod(f[3]);
      r.pool_count = std::stoull(f[4]);
      r.pool_accuracy = std::stod(f[5]);
      r.pool_vacuous = f[6] == "1";
      r.target_test_accuracy = std::stod(f[7]);
    } catch (const std::exception&) {
      throw FormatError(p.string() + ": bad row '" + line + "'");
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace metasl

#endif  // METASL_IO_HPP
