#include <gtest/gtest.h>

#include <cmath>

#include "metairnet/augment.hpp"

namespace metairnet {
namespace {

Image random_image(Rng& rng, std::size_t h = 6, std::size_t w = 6) {
  return uniform_tensor<float>({3, h, w}, rng, -1, 1);
}

TEST(Flip, Basics) {
  Rng rng(1);
  auto img = random_image(rng, 5, 7);
  EXPECT_TRUE(flip_augment(flip_augment(img)) == img);
  Image pair({1, 1, 2}, {0.25f, -0.5f});
  EXPECT_TRUE(flip_augment(pair) == Image({1, 1, 2}, {-0.5f, 0.25f}));
  Image sym({1, 2, 3}, {1, 2, 1, 3, 4, 3});
  EXPECT_TRUE(flip_augment(sym) == sym);
}

TEST(Gaussian, IdentityDefaultAndMonteCarlo) {
  Rng rng(2);
  auto f = normal_tensor<double>({8}, rng);
  EXPECT_TRUE(gaussian_feature_augment(f, 0.0, rng) == f);
  EXPECT_EQ(AugmentationSpec{}.gaussian_sigma, 0.01);
  Tensor<double> zeros({100000});
  auto noisy = gaussian_feature_augment(zeros, 0.01, rng);
  double sum = 0, sq = 0;
  for (double v : noisy.values()) {
    sum += v;
    sq += v * v;
  }
  const double n = 100000.0, mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(sd, 0.01, 0.0005);
}

TEST(Mixup, HandArithmetic) {
  Rng rng(3);
  auto a = random_image(rng), b = random_image(rng);
  EXPECT_TRUE(mixup_images(a, b, 1.0) == a);
  EXPECT_TRUE(mixup_images(a, b, 0.0) == b);
  Image zero({1, 1, 1}, 0.0f), four({1, 1, 1}, 4.0f);
  EXPECT_FLOAT_EQ(mixup_images(zero, four, 0.25)[0], 3.0f);
  EXPECT_THROW(mixup_images(a, random_image(rng, 6, 5), 0.5), std::invalid_argument);
}

TEST(ManifoldMixup, HandArithmeticAndConvexity) {
  Tensor<double> a({2}, {0, 2}), b({2}, {2, 0});
  EXPECT_TRUE(manifold_mixup_embed(a, b, 1.0) == a);
  EXPECT_TRUE(manifold_mixup_embed(a, b, 0.5) == Tensor<double>({2}, {1, 1}));
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    auto x = normal_tensor<double>({5}, rng), y = normal_tensor<double>({5}, rng);
    auto m = manifold_mixup_embed(x, y, uniform_real(rng, 0, 1));
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_GE(m[i], std::min(x[i], y[i]) - 1e-12);
      EXPECT_LE(m[i], std::max(x[i], y[i]) + 1e-12);
    }
  }
}

TEST(Cutmix, Regions) {
  Rng rng(5);
  auto a = random_image(rng), b = random_image(rng);
  EXPECT_TRUE(cutmix_images(a, b, {0, 0, 6, 6}) == b);
  EXPECT_TRUE(cutmix_images(a, b, {2, 2, 2, 2}) == a);
  Image p({1, 2, 2}, {1, 2, 3, 4}), q({1, 2, 2}, {-1, -2, -3, -4});
  EXPECT_TRUE(cutmix_images(p, q, {0, 0, 1, 1}) == Image({1, 2, 2}, {-1, 2, 3, 4}));
  EXPECT_THROW(cutmix_images(a, b, {0, 0, 7, 6}), std::invalid_argument);
}

TEST(Cutmix, RandomRegionAreaBounds) {
  Rng rng(6);
  for (int t = 0; t < 500; ++t) {
    auto r = random_cutmix_region(64, 64, 0.1, 0.5, rng);
    EXPECT_LE(r.y1, 64u);
    EXPECT_LE(r.x1, 64u);
    const double frac = static_cast<double>(r.area()) / 4096.0;
    EXPECT_GT(frac, 0.05);
    EXPECT_LT(frac, 0.6);
  }
}

TEST(Jitter, IdentityDeterminismAndShiftOracle) {
  Rng rng(7);
  auto img = random_image(rng, 10, 10);
  EXPECT_TRUE(jitter_augment(img, 0.0, rng) == img);
  Rng a(9), b(9);
  EXPECT_TRUE(jitter_augment(img, 0.2, a) == jitter_augment(img, 0.2, b));
  for (long dy = -3; dy <= 3; ++dy)
    for (long dx = -3; dx <= 3; ++dx) {
      auto shifted = shift_image(img, dy, dx);
      // Brute-force relocation: every source pixel moves by (dy, dx) when it stays inside.
      for (long y = 0; y < 10; ++y)
        for (long x = 0; x < 10; ++x) {
          const long ty = y + dy, tx = x + dx;
          if (ty < 0 || ty >= 10 || tx < 0 || tx >= 10) continue;
          for (std::size_t c = 0; c < 3; ++c) {
            ASSERT_EQ(shifted.at(c, ty, tx), img.at(c, y, x));
          }
        }
    }
}

TEST(ManualGrid, PatternsAndKernelEquivalence) {
  Rng rng(8);
  auto a = random_image(rng, 7, 7), b = random_image(rng, 7, 7);
  WeightGrid<double> ones{3, Tensor<double>({3, 3}, 1.0)}, zeros{3, Tensor<double>({3, 3}, 0.0)};
  EXPECT_TRUE(manual_grid_mix(a, b, ones) == a);
  EXPECT_TRUE(manual_grid_mix(a, b, zeros) == b);

  AugmentationSpec spec;
  auto checker = pattern_grid(spec);
  auto mixed = manual_grid_mix(a, b, checker);
  EXPECT_TRUE(mixed == fuse_images(a, b, expand_weight_grid(checker, 7, 7)));
  const std::size_t bounds[] = {0, 2, 4, 7};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const Image& src = ((i + j) % 2 == 0) ? a : b;
      for (std::size_t y = bounds[i]; y < bounds[i + 1]; ++y)
        for (std::size_t x = bounds[j]; x < bounds[j + 1]; ++x)
          for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(mixed.at(c, y, x), src.at(c, y, x));
    }
  WeightGrid<double> soft{3, Tensor<double>({3, 3}, 0.5)};
  EXPECT_THROW(manual_grid_mix(a, b, soft), std::invalid_argument);
}

TEST(Augmentation, ModeNamesRoundTrip) {
  for (const auto& [mode, name] : augmentation_mode_names()) EXPECT_EQ(parse_augmentation_mode(name), mode);
  EXPECT_THROW(parse_augmentation_mode("rotate"), ConfigError);
  AugmentationSpec spec;
  spec.manual_pattern = {1, 2, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(Augmentation, ShapeAndRangePreserved) {
  Rng rng(10);
  auto a = random_image(rng, 9, 9), b = random_image(rng, 9, 9);
  const AugmentationSpec spec;
  for (const Image& out : {flip_augment(a), mixup_images(a, b, 0.3), jitter_augment(a, 0.2, rng),
                           cutmix_images(a, b, random_cutmix_region(9, 9, 0.1, 0.5, rng)),
                           manual_grid_mix(a, b, pattern_grid(spec))}) {
    EXPECT_EQ(out.shape(), a.shape());
    for (float v : out.values()) {
      EXPECT_GE(v, -1.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

}  // namespace
}  // namespace metairnet
