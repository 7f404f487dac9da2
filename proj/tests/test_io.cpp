#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "metasl/io.hpp"
#include "metasl/meta.hpp"

using namespace metasl;

namespace {

fs::path scratch(const std::string& name)
{
  const auto p = fs::temp_directory_path() / ("metasl_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p)
{
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Dataset, RoundTripIsExact)
{
  const GlyphWorld world;
  DatasetBundle b;
  b.seed = 5;
  for (auto d : {DomainName::PlateLike, DomainName::StreetLike})
    b.domains.push_back(generate_domain(default_spec(d), 30, derive_seed(5, static_cast<std::uint64_t>(d)), world));
  const auto dir = scratch("dataset");
  save_dataset(dir, b);
  const auto back = load_dataset(dir);
  ASSERT_EQ(back.domains.size(), 2u);
  EXPECT_EQ(back.glyphs, 16u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(back.domains[k].spec, b.domains[k].spec);
    EXPECT_EQ(back.domains[k].seed, b.domains[k].seed);
    ASSERT_EQ(back.domains[k].train.size(), 27u);
    for (std::size_t i = 0; i < 27; ++i) {
      EXPECT_EQ(back.domains[k].train[i].image, b.domains[k].train[i].image);
      EXPECT_EQ(back.domains[k].train[i].label, b.domains[k].train[i].label);
    }
  }
}

TEST(Dataset, SameSeedGivesByteIdenticalFiles)
{
  const GlyphWorld world;
  auto bundle = [&] {
    DatasetBundle b;
    b.domains.push_back(generate_domain(default_spec(DomainName::DocumentLike), 20, 3, world));
    return b;
  };
  const auto a = scratch("det_a"), b = scratch("det_b");
  save_dataset(a, bundle());
  save_dataset(b, bundle());
  for (const auto* f : {"manifest.json", "document_like.train.bin", "document_like.test.labels"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Dataset, CorruptImageFileIsRejected)
{
  const GlyphWorld world;
  DatasetBundle b;
  b.domains.push_back(generate_domain(default_spec(DomainName::PlateLike), 20, 3, world));
  const auto dir = scratch("corrupt");
  save_dataset(dir, b);
  {
    std::ofstream os(dir / "plate_like.train.bin", std::ios::binary | std::ios::trunc);
    os << "junk";
  }
  EXPECT_THROW(load_dataset(dir), FormatError);
  EXPECT_THROW(load_dataset(scratch("missing")), std::runtime_error);
}

TEST(Checkpoint, RoundTripAndSidecar)
{
  ModelConfig cfg;
  cfg.hidden = cfg.attn = cfg.enc_hidden = 6;
  const auto m = init_model(cfg, 11);
  const auto dir = scratch("ckpt");
  save_checkpoint(dir / "m.ckpt", m, 1234, "abcdef0123456789");
  const auto ck = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ck.iteration, 1234u);
  EXPECT_EQ(ck.config_hash, "abcdef0123456789");
  EXPECT_EQ(ck.model.config, cfg);
  EXPECT_EQ(ck.model.theta.flatten(), m.theta.flatten());
  EXPECT_EQ(fs::file_size(dir / "m.ckpt"), m.theta.count() * sizeof(double));
  const auto side = nlohmann::json::parse(slurp(dir / "m.ckpt.json"));
  EXPECT_EQ(side["params"][0]["name"], "enc.w1");
  EXPECT_EQ(side["count"], m.theta.count());
}

TEST(Checkpoint, TruncatedBinaryIsRejected)
{
  const auto m = init_model(ModelConfig{}, 1);
  const auto dir = scratch("ckpt_trunc");
  save_checkpoint(dir / "m.ckpt", m, 0, "");
  fs::resize_file(dir / "m.ckpt", 16);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), FormatError);
}

TEST(Metrics, CsvHeaderAndRoundTrip)
{
  std::vector<MetricsRecord> log(2);
  log[0].iteration = 100;
  log[0].outer_loss = 1.25;
  log[0].target_test_accuracy = 0.5;
  log[1].iteration = 200;
  log[1].l_a = 0.1;
  log[1].l_b = 0.2;
  log[1].outer_loss = 0.3;
  log[1].pool_count = 17;
  log[1].pool_accuracy = 0.875;
  log[1].pool_vacuous = false;
  log[1].target_test_accuracy = 0.25;
  std::ostringstream os;
  write_metrics_csv(os, log);
  EXPECT_EQ(os.str(),
            "iteration,l_a,l_b,outer_loss,pool_count,pool_accuracy,pool_vacuous_flag,target_test_accuracy\n"
            "100,nan,nan,1.25,0,1,1,0.5\n"
            "200,0.1,0.2,0.3,17,0.875,0,0.25\n");
  const auto dir = scratch("csv");
  write_metrics_csv(dir / "m.csv", log);
  const auto back = read_metrics_csv(dir / "m.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_TRUE(std::isnan(back[0].l_a));
  EXPECT_TRUE(back[0].pool_vacuous);
  EXPECT_EQ(back[1].pool_count, 17u);
  EXPECT_DOUBLE_EQ(back[1].pool_accuracy, 0.875);
}

TEST(Metrics, BadHeaderIsRejected)
{
  const auto dir = scratch("csv_bad");
  std::ofstream(dir / "m.csv") << "a,b\n1,2\n";
  EXPECT_THROW(read_metrics_csv(dir / "m.csv"), FormatError);
}
