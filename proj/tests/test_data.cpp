#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "metairnet/data.hpp"

namespace metairnet {
namespace {

namespace fs = std::filesystem;

Dataset toy_dataset(std::size_t classes, std::size_t per_class, std::size_t size = 4) {
  std::vector<LabeledImage> items;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      Image img({3, size, size}, static_cast<float>(c * 100 + i) / 1000.0f);
      items.push_back({img, static_cast<ClassId>(c), {}, "toy"});
    }
  return Dataset(std::move(items));
}

std::vector<ClassId> range_classes(int lo, int hi) {
  std::vector<ClassId> out;
  for (int c = lo; c <= hi; ++c) out.push_back(c);
  return out;
}

TEST(ClassSplits, ExplicitListsAreKept) {
  auto split = build_class_splits(range_classes(1, 5), ExplicitSplit{{1, 2}, {3}, {4, 5}});
  EXPECT_EQ(split.base, (std::set<ClassId>{1, 2}));
  EXPECT_EQ(split.val, (std::set<ClassId>{3}));
  EXPECT_EQ(split.novel, (std::set<ClassId>{4, 5}));
}

TEST(ClassSplits, RatioSizesFollowFloorWithRemainderToBase) {
  auto split = build_class_splits(range_classes(0, 9), RatioSplit{0.5, 0.2, 0.3, 7});
  // Brute-force recount: val and novel get floor(N * ratio); base the rest.
  std::size_t expect_val = 0, expect_novel = 0;
  for (std::size_t k = 1; k <= 10; ++k) {
    if (static_cast<double>(k) <= 10 * 0.2 + 1e-9) expect_val = k;
    if (static_cast<double>(k) <= 10 * 0.3 + 1e-9) expect_novel = k;
  }
  EXPECT_EQ(split.val.size(), expect_val);
  EXPECT_EQ(split.novel.size(), expect_novel);
  EXPECT_EQ(split.base.size(), 10 - expect_val - expect_novel);
  EXPECT_EQ(split.base.size(), 5u);
  EXPECT_EQ(split.val.size(), 2u);
  EXPECT_EQ(split.novel.size(), 3u);
}

TEST(ClassSplits, RatioSplitIsDeterministicAndDisjoint) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto a = build_class_splits(range_classes(0, 19), RatioSplit{0.5, 0.25, 0.25, seed});
    auto b = build_class_splits(range_classes(0, 19), RatioSplit{0.5, 0.25, 0.25, seed});
    EXPECT_EQ(a.base, b.base);
    EXPECT_EQ(a.novel, b.novel);
    std::set<ClassId> all;
    for (const auto* s : {&a.base, &a.val, &a.novel}) {
      for (ClassId c : *s) EXPECT_TRUE(all.insert(c).second) << "class " << c << " in two splits";
    }
    EXPECT_EQ(all.size(), 20u);
  }
}

TEST(ClassSplits, Rejections) {
  EXPECT_THROW(build_class_splits(range_classes(1, 5), ExplicitSplit{{1, 2}, {3}, {3, 4, 5}}), ConfigError);
  EXPECT_THROW(build_class_splits(range_classes(1, 5), ExplicitSplit{{1, 2, 3}, {}, {4, 5}}), ConfigError);
  EXPECT_THROW(build_class_splits(range_classes(1, 5), ExplicitSplit{{1, 2}, {3}, {4}}), ConfigError);
  EXPECT_THROW(build_class_splits(range_classes(0, 2), RatioSplit{0.8, 0.1, 0.1, 1}), ConfigError);
  EXPECT_THROW(build_class_splits(range_classes(0, 9), RatioSplit{0.5, 0.5, 0.5, 1}), ConfigError);
}

TEST(EpisodeSampling, PaperShape) {
  auto ds = toy_dataset(8, 20);
  Rng rng(3);
  auto ep = sample_episode(ds, ds.classes(), 5, 1, 16, rng);
  EXPECT_EQ(ep.support.size(), 5u);
  EXPECT_EQ(ep.query.size(), 80u);
}

TEST(EpisodeSampling, MinimalEpisode) {
  auto ds = toy_dataset(1, 2);
  Rng rng(1);
  auto ep = sample_episode(ds, ds.classes(), 1, 1, 1, rng);
  ASSERT_EQ(ep.support.size(), 1u);
  ASSERT_EQ(ep.query.size(), 1u);
  EXPECT_NE(ep.support[0].index, ep.query[0].index);
}

// Independent replay of the documented draw order using list erasure
// instead of in-place swaps.
Episode replay(const Dataset& ds, std::vector<ClassId> pool, std::size_t n, std::size_t m, std::size_t q,
               std::uint64_t seed) {
  Rng rng(seed);
  std::sort(pool.begin(), pool.end());
  std::vector<ClassId> picked;
  std::vector<ClassId> remaining = pool;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, remaining.size() - 1)(rng);
    // Swap-based Fisher-Yates moves the last-swapped element into slot j;
    // emulate it on the tail of `remaining`.
    picked.push_back(remaining[j]);
    remaining[j] = remaining[0];
    remaining.erase(remaining.begin());
  }
  Episode ep;
  ep.n = n;
  for (std::size_t local = 0; local < n; ++local) {
    std::vector<std::size_t> rest = ds.indices_of(picked[local]);
    std::vector<std::size_t> drawn;
    for (std::size_t i = 0; i < m + q; ++i) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(0, rest.size() - 1)(rng);
      drawn.push_back(rest[j]);
      rest[j] = rest[0];
      rest.erase(rest.begin());
    }
    for (std::size_t i = 0; i < m + q; ++i) {
      (i < m ? ep.support : ep.query).push_back({drawn[i], local});
    }
    ep.classes.push_back(picked[local]);
  }
  return ep;
}

TEST(EpisodeSampling, MatchesIndependentReplay) {
  auto ds = toy_dataset(4, 6);
  for (std::uint64_t seed : {0ull, 7ull, 42ull, 1234ull}) {
    Rng rng(seed);
    auto ep = sample_episode(ds, ds.classes(), 2, 2, 2, rng);
    auto oracle = replay(ds, ds.classes(), 2, 2, 2, seed);
    EXPECT_EQ(ep.classes, oracle.classes);
    ASSERT_EQ(ep.support.size(), oracle.support.size());
    for (std::size_t i = 0; i < ep.support.size(); ++i) {
      EXPECT_EQ(ep.support[i].index, oracle.support[i].index);
      EXPECT_EQ(ep.support[i].label, oracle.support[i].label);
    }
    for (std::size_t i = 0; i < ep.query.size(); ++i) EXPECT_EQ(ep.query[i].index, oracle.query[i].index);
  }
}

TEST(EpisodeSampling, InvariantsOverManySeeds) {
  auto ds = toy_dataset(10, 12);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng a(seed), b(seed);
    auto ep = sample_episode(ds, ds.classes(), 5, 2, 3, a);
    auto again = sample_episode(ds, ds.classes(), 5, 2, 3, b);
    std::set<std::size_t> support, query;
    std::vector<std::size_t> per_class_s(5), per_class_q(5);
    for (std::size_t i = 0; i < ep.support.size(); ++i) {
      support.insert(ep.support[i].index);
      ++per_class_s[ep.support[i].label];
      EXPECT_EQ(ep.support[i].index, again.support[i].index);
      EXPECT_EQ(ep.label_map.at(ds[ep.support[i].index].label), ep.support[i].label);
    }
    for (const auto& item : ep.query) {
      query.insert(item.index);
      ++per_class_q[item.label];
    }
    for (std::size_t idx : support) EXPECT_FALSE(query.count(idx));
    EXPECT_EQ(support.size(), 10u);
    EXPECT_EQ(query.size(), 15u);
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_EQ(per_class_s[c], 2u);
      EXPECT_EQ(per_class_q[c], 3u);
    }
  }
}

TEST(EpisodeSampling, DescriptiveErrors) {
  std::vector<LabeledImage> items;
  for (int i = 0; i < 5; ++i) items.push_back({Image({3, 2, 2}, 0.1f * i), 0, {}, ""});
  items.push_back({Image({3, 2, 2}, 0.9f), 7, {}, ""});
  Dataset ds(std::move(items));
  Rng rng(0);
  EXPECT_THROW(sample_episode(ds, ds.classes(), 3, 1, 1, rng), DataError);
  try {
    sample_episode(ds, ds.classes(), 2, 1, 1, rng);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("class 7"), std::string::npos) << e.what();
  }
}

class ImageDirectory : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("metairnet_data_" + std::to_string(::getpid()));
    fs::remove_all(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  void write(const fs::path& rel, std::uint8_t value, std::size_t size = 10) {
    RgbBuffer rgb{size, size + 2, std::vector<std::uint8_t>(size * (size + 2) * 3, value)};
    write_png(root_ / rel, rgb);
  }

  fs::path root_;
};

TEST_F(ImageDirectory, LoadsAndResizes) {
  for (const char* cls : {"b_class", "a_class"})
    for (int i = 0; i < 3; ++i) write(fs::path(cls) / ("img" + std::to_string(i) + ".png"), 40 * i);
  auto loaded = load_image_directory(root_, 64);
  ASSERT_EQ(loaded.images.size(), 6u);
  for (const auto& item : loaded.images) EXPECT_EQ(item.image.shape(), (Shape{3, 64, 64}));
  EXPECT_EQ(loaded.class_names, (std::vector<std::string>{"a_class", "b_class"}));
  EXPECT_EQ(loaded.images.front().label, 0);
  EXPECT_EQ(loaded.images.back().label, 1);
}

TEST_F(ImageDirectory, RescalesEndpoints) {
  write("c/white.png", 255);
  write("c/black.png", 0);
  auto loaded = load_image_directory(root_, 8);
  ASSERT_EQ(loaded.images.size(), 2u);
  // Sorted file order: black, white.
  for (float v : loaded.images[0].image.values()) EXPECT_FLOAT_EQ(v, -1.0f);
  for (float v : loaded.images[1].image.values()) EXPECT_FLOAT_EQ(v, 1.0f);
}

TEST_F(ImageDirectory, SkipsUndecodableAndRejectsEmptyClass) {
  write("c/ok.png", 10);
  fs::create_directories(root_ / "c");
  std::ofstream(root_ / "c" / "broken.png") << "not a png";
  auto loaded = load_image_directory(root_, 8);
  EXPECT_EQ(loaded.images.size(), 1u);
  ASSERT_EQ(loaded.report.skipped.size(), 1u);
  EXPECT_NE(loaded.report.skipped[0].first.find("broken.png"), std::string::npos);

  fs::create_directories(root_ / "empty");
  EXPECT_THROW(load_image_directory(root_, 8), DataError);
}

TEST_F(ImageDirectory, ManifestLayout) {
  write("x/one.png", 0);
  write("y/two.png", 255);
  fs::create_directories(root_);
  std::ofstream(root_ / "manifest.tsv") << "x/one.png\t3\ny/two.png\t5\n";
  auto loaded = load_manifest(root_ / "manifest.tsv", root_, 16);
  ASSERT_EQ(loaded.images.size(), 2u);
  EXPECT_EQ(loaded.images[0].label, 3);
  EXPECT_EQ(loaded.images[1].label, 5);
}

}  // namespace
}  // namespace metairnet
