#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "metairnet/cache.hpp"
#include "metairnet/checkpoint.hpp"
#include "metairnet/config.hpp"
#include "metairnet/ledger.hpp"

namespace metairnet {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("metairnet_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path path;
};

TEST(Archive, ModelRoundTrip) {
  TempDir dir("ckpt");
  TrainConfig config;
  config.mode = AugmentationMode::metairnet;
  config.classifier = {2, 4, 16};
  config.fusion = {3, {2, 4, 16}};
  MetaModel model = make_model(config);
  // Make the buffers non-default so they are checked too.
  for (auto& b : model.buffers()) b.tensor->fill(0.25f);
  save_model(dir.path / "m.ckpt", model, {{"config_hash", "abc"}, {"val_accuracy", 61.5}});

  json meta;
  MetaModel loaded = load_model(dir.path / "m.ckpt", config, &meta);
  EXPECT_EQ(meta["config_hash"], "abc");
  EXPECT_EQ(meta["val_accuracy"], 61.5);
  ASSERT_TRUE(loaded.fusion);
  auto a = model.params(), b = loaded.params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].var.value(), b[i].var.value()) << a[i].name;
  for (const auto& buf : loaded.buffers())
    for (float v : buf.tensor->values()) EXPECT_EQ(v, 0.25f);

  config.classifier.width = 8;
  EXPECT_THROW(load_model(dir.path / "m.ckpt", config), DataError);
}

TEST(Archive, RejectsForeignAndTruncatedFiles) {
  TempDir dir("ckpt_bad");
  {
    std::ofstream(dir.path / "x.ckpt") << "not a checkpoint";
  }
  EXPECT_THROW(read_archive(dir.path / "x.ckpt"), DataError);
  EXPECT_THROW(read_archive(dir.path / "missing.ckpt"), DataError);

  Archive a;
  a.tensors.emplace_back("t", Tensor<float>({4}, {1, 2, 3, 4}));
  write_archive(dir.path / "ok.ckpt", a);
  EXPECT_EQ(read_archive(dir.path / "ok.ckpt").tensor("t")[3], 4.0f);
  fs::resize_file(dir.path / "ok.ckpt", fs::file_size(dir.path / "ok.ckpt") - 4);
  EXPECT_THROW(read_archive(dir.path / "ok.ckpt"), DataError);
}

TEST(Archive, GeneratorRoundTrip) {
  TempDir dir("gen");
  GeneratorArch arch;
  arch.latent_dim = 6;
  arch.embed_dim = 4;
  arch.num_classes = 3;
  arch.image_size = 8;
  arch.channels = {6, 4};
  Rng rng(2);
  auto gen = init_generator<float>(arch, rng);
  for (auto& l : gen.bn.layers) l.beta_weight = uniform_tensor<float>(l.beta_weight.shape(), rng, -1, 1);
  save_generator(dir.path / "g.ckpt", gen);
  auto back = load_generator(dir.path / "g.ckpt");
  EXPECT_EQ(*back.weights, *gen.weights);
  EXPECT_EQ(back.bn, gen.bn);
  try {
    load_generator(dir.path / "nope.ckpt");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.ckpt"), std::string::npos);
  }
}

class CacheFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    dataset = make_synthetic_birds({3, 2, 8, 1, 1.0, 1.0});  // 6 images
    arch.latent_dim = 8;
    arch.embed_dim = 4;
    arch.image_size = 8;
    arch.channels = {4, 4};
    Rng rng(3);
    gen = init_generator<float>(arch, rng);
    adapt.steps = 3;
    adapt.num_variants = 10;
    for (std::size_t i = 0; i < dataset.size(); ++i) all.push_back(i);
  }
  Dataset dataset;
  GeneratorArch arch;
  PretrainedGenerator<float> gen;
  AdaptConfig adapt;
  IdentityExtractor<float> extractor;
  std::vector<std::size_t> all;
};

std::size_t count_png(const fs::path& root) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(root)) n += e.path().extension() == ".png";
  return n;
}

TEST_F(CacheFixture, PopulatesIdempotentlyAndResumes) {
  TempDir dir("cache");
  GeneratedCache cache(dir.path, 8);
  auto r1 = populate_cache(dataset, all, gen, adapt, extractor, cache, "h1", 5);
  EXPECT_EQ(r1.generated, 6u);
  EXPECT_EQ(count_png(dir.path), 60u);

  auto r2 = populate_cache(dataset, all, gen, adapt, extractor, cache, "h1", 5);
  EXPECT_EQ(r2.generated, 0u);
  EXPECT_EQ(r2.skipped, 6u);

  // Remove half the entries; the rerun regenerates only those, identically.
  const auto before = cache.variants(dataset[0].id);
  for (std::size_t i = 0; i < 3; ++i) fs::remove_all(cache.entry_dir(dataset[i].id));
  GeneratedCache fresh(dir.path, 8);
  auto r3 = populate_cache(dataset, all, gen, adapt, extractor, fresh, "h1", 5);
  EXPECT_EQ(r3.generated, 3u);
  EXPECT_EQ(r3.skipped, 3u);
  EXPECT_EQ(count_png(dir.path), 60u);
  const auto& after = fresh.variants(dataset[0].id);
  ASSERT_EQ(after.size(), before.size());
  for (std::size_t k = 0; k < after.size(); ++k) EXPECT_EQ(after[k], before[k]);

  auto meta = fresh.read_meta(dataset[0].id);
  ASSERT_TRUE(meta);
  EXPECT_EQ(meta->loss_trace.size(), 3u);
  EXPECT_EQ(meta->variants, 10u);

  // A different config hash invalidates every entry.
  auto r4 = populate_cache(dataset, all, gen, adapt, extractor, fresh, "h2", 5);
  EXPECT_EQ(r4.generated, 6u);
}

TEST_F(CacheFixture, MissingEntryNamesImage) {
  TempDir dir("cache_missing");
  GeneratedCache cache(dir.path, 8);
  try {
    cache.variants("deadbeef");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("deadbeef"), std::string::npos);
  }
}

TEST(Config, StrictKeysAndDefaults) {
  json j = {{"dataset", {{"kind", "synthetic"}}}, {"train", {{"mode", "metairnet"}, {"n_aug", 2}}}};
  auto c = parse_config(j);
  EXPECT_EQ(c.train.mode, AugmentationMode::metairnet);
  EXPECT_EQ(c.train.n_aug, 2u);
  EXPECT_EQ(c.train.learning_rate, 0.001);
  EXPECT_EQ(c.eval.episodes, 1000u);
  EXPECT_EQ(c.eval.probe_episodes, 2000u);
  EXPECT_EQ(c.adapt.num_variants, 10u);

  json bad = j;
  bad["train"]["learnig_rate"] = 0.1;
  try {
    parse_config(bad);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.learnig_rate"), std::string::npos);
  }
  EXPECT_THROW(parse_config({{"surprise", 1}}), ConfigError);
  EXPECT_THROW(parse_config({{"train", {{"mode", "rotate"}}}}), ConfigError);
  EXPECT_THROW(parse_config({{"train", {{"epochs", "many"}}}}), ConfigError);
  EXPECT_THROW(parse_config({{"split", {{"ratios", {0.5, 0.5}}}}}), ConfigError);

  auto ex = parse_config({{"split", {{"classes", {{"base", {0, 1}}, {"val", {2}}, {"novel", {3}}}}}}});
  ASSERT_TRUE(std::holds_alternative<ExplicitSplit>(ex.split));
  EXPECT_EQ(std::get<ExplicitSplit>(ex.split).novel, std::vector<ClassId>{3});
}

TEST(Config, HashAndEnvironment) {
  json j = {{"dataset", {{"kind", "synthetic"}}}};
  auto a = parse_config(j), b = parse_config(j);
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.train.learning_rate = 0.002;
  EXPECT_NE(config_hash(a), config_hash(b));
  // Serialisation round-trips through the parser.
  EXPECT_EQ(config_hash(parse_config(to_json(b))), config_hash(b));

  setenv("METAIRNET_OUTPUT_DIR", "/tmp/elsewhere", 1);
  apply_environment(a);
  unsetenv("METAIRNET_OUTPUT_DIR");
  EXPECT_EQ(a.output_dir, "/tmp/elsewhere");

  auto c = parse_config({{"dataset", {{"kind", "directory"}}}});
  EXPECT_THROW(finalize_config(c), ConfigError);  // no root
}

TEST(Ledger, AppendAndRead) {
  TempDir dir("ledger");
  const auto path = dir.path / "sub" / "ledger.csv";
  append_ledger(path, {"evaluate", "abc", "none", 5, 1, 16, 1000, 81.25, 0.6});
  append_ledger(path, {"evaluate", "abc", "metairnet", 5, 1, 16, 1000, 83.5, 0.55});
  auto rows = read_ledger(path);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].mode, "metairnet");
  EXPECT_EQ(rows[1].episodes, 1000u);
  EXPECT_NEAR(rows[0].mean, 81.25, 1e-9);
}

}  // namespace
}  // namespace metairnet
