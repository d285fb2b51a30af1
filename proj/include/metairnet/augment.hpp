#pragma once

// Comparison augmentations: flip, feature noise, mixup (pixel and feature
// level), cutmix, jitter and fixed binary grid mixing.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "metairnet/errors.hpp"
#include "metairnet/fusion.hpp"
#include "metairnet/hash.hpp"
#include "metairnet/rng.hpp"

namespace metairnet {

enum class AugmentationMode {
  none,
  metairnet,
  flip,
  gaussian,
  finetunegan_raw,
  mixup,
  manifold_mixup,
  cutmix,
  jitter,
  manual_grid,
};

inline const std::vector<std::pair<AugmentationMode, std::string>>& augmentation_mode_names() {
  static const std::vector<std::pair<AugmentationMode, std::string>> names{
      {AugmentationMode::none, "none"},
      {AugmentationMode::metairnet, "metairnet"},
      {AugmentationMode::flip, "flip"},
      {AugmentationMode::gaussian, "gaussian"},
      {AugmentationMode::finetunegan_raw, "finetunegan_raw"},
      {AugmentationMode::mixup, "mixup"},
      {AugmentationMode::manifold_mixup, "manifold_mixup"},
      {AugmentationMode::cutmix, "cutmix"},
      {AugmentationMode::jitter, "jitter"},
      {AugmentationMode::manual_grid, "manual_grid"},
  };
  return names;
}

inline std::string to_string(AugmentationMode mode) {
  for (const auto& [m, name] : augmentation_mode_names()) {
    if (m == mode) return name;
  }
  return "unknown";
}

inline AugmentationMode parse_augmentation_mode(const std::string& text) {
  for (const auto& [m, name] : augmentation_mode_names()) {
    if (name == text) return m;
  }
  throw ConfigError("unknown augmentation mode '" + text + "'");
}

/// Modes whose fusion network is trained jointly with the classifier.
inline bool uses_fusion(AugmentationMode mode) {
  return mode == AugmentationMode::metairnet || mode == AugmentationMode::jitter;
}

/// Modes that read generator variants from the cache.
inline bool uses_generated(AugmentationMode mode) {
  return mode == AugmentationMode::metairnet || mode == AugmentationMode::finetunegan_raw ||
         mode == AugmentationMode::manual_grid;
}

struct AugmentationSpec {
  double gaussian_sigma = 0.01;
  double cutmix_min_area = 0.1;
  double cutmix_max_area = 0.5;
  double jitter_magnitude = 0.1;
  std::size_t jitter_variants = 10;
  std::size_t manual_grid = 3;
  /// Row-major g x g binary pattern; 1 keeps the original block.
  std::vector<int> manual_pattern{1, 0, 1, 0, 1, 0, 1, 0, 1};

  void validate() const {
    if (!(gaussian_sigma >= 0)) throw ConfigError("gaussian_sigma must be non-negative");
    if (!(cutmix_min_area >= 0 && cutmix_min_area <= cutmix_max_area && cutmix_max_area <= 1)) {
      throw ConfigError("cutmix area fractions must satisfy 0 <= min <= max <= 1");
    }
    if (!(jitter_magnitude >= 0 && jitter_magnitude < 1)) throw ConfigError("jitter_magnitude must lie in [0, 1)");
    if (jitter_variants == 0) throw ConfigError("jitter_variants must be positive");
    if (manual_pattern.size() != manual_grid * manual_grid) {
      throw ConfigError("manual_pattern needs " + std::to_string(manual_grid * manual_grid) + " entries");
    }
    for (int v : manual_pattern) {
      if (v != 0 && v != 1) throw ConfigError("manual_pattern entries must be 0 or 1");
    }
  }
};

// ------------------------------------------------------------- image level

/// Reverses the column order of every row.
inline Image flip_augment(const Image& image) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Image out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(ch, y, x) = image.at(ch, y, w - 1 - x);
  return out;
}

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

/// lam * a + (1 - lam) * b.
inline Image mixup_images(const Image& a, const Image& b, double lam) {
  require_same_shape(a, b, "mixup_images");
  if (!(lam >= 0 && lam <= 1)) throw std::invalid_argument("mixup_images: lam must lie in [0, 1]");
  Image out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = static_cast<float>(lam * a[i] + (1 - lam) * b[i]);
  }
  return out;
}

/// Half-open pixel rectangle [y0, y1) x [x0, x1).
struct Region {
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  std::size_t area() const { return (y1 - y0) * (x1 - x0); }
};

/// `a` outside the region, `b` inside it.
inline Image cutmix_images(const Image& a, const Image& b, const Region& region) {
  require_same_shape(a, b, "cutmix_images");
  const std::size_t h = a.dim(1), w = a.dim(2);
  if (region.y0 > region.y1 || region.x0 > region.x1 || region.y1 > h || region.x1 > w) {
    throw std::invalid_argument("cutmix_images: region out of bounds");
  }
  Image out = a;
  for (std::size_t ch = 0; ch < a.dim(0); ++ch)
    for (std::size_t y = region.y0; y < region.y1; ++y)
      for (std::size_t x = region.x0; x < region.x1; ++x) out.at(ch, y, x) = b.at(ch, y, x);
  return out;
}

/// Uniformly placed rectangle whose area fraction is drawn from
/// U[min_area, max_area] and whose aspect ratio is drawn log-uniformly in [1/2, 2].
inline Region random_cutmix_region(std::size_t height, std::size_t width, double min_area, double max_area,
                                   Rng& rng) {
  const double area = uniform_real(rng, min_area, max_area) * static_cast<double>(height * width);
  const double aspect = std::exp(uniform_real(rng, std::log(0.5), std::log(2.0)));
  auto clamp_len = [](double v, std::size_t limit) {
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(v)), 0, limit);
  };
  const std::size_t rh = clamp_len(std::sqrt(area * aspect), height);
  const std::size_t rw = clamp_len(area / std::max<double>(1.0, static_cast<double>(rh)), width);
  const std::size_t y0 = uniform_index(rng, height - rh + 1);
  const std::size_t x0 = uniform_index(rng, width - rw + 1);
  return {y0, x0, y0 + rh, x0 + rw};
}

/// Translates content by (dy, dx) pixels, replicating the border.
inline Image shift_image(const Image& image, long dy, long dx) {
  const long h = static_cast<long>(image.dim(1)), w = static_cast<long>(image.dim(2));
  Image out(image.shape());
  for (std::size_t ch = 0; ch < image.dim(0); ++ch)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        const long sy = std::clamp(y - dy, 0L, h - 1), sx = std::clamp(x - dx, 0L, w - 1);
        out.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            image.at(ch, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
      }
  return out;
}

/// Random integer translation of up to +-magnitude of each side length.
inline Image jitter_augment(const Image& image, double magnitude, Rng& rng) {
  if (!(magnitude >= 0)) throw std::invalid_argument("jitter_augment: magnitude must be non-negative");
  const long my = std::lround(magnitude * static_cast<double>(image.dim(1)));
  const long mx = std::lround(magnitude * static_cast<double>(image.dim(2)));
  if (my == 0 && mx == 0) return image;
  const long dy = static_cast<long>(uniform_index(rng, static_cast<std::size_t>(2 * my + 1))) - my;
  const long dx = static_cast<long>(uniform_index(rng, static_cast<std::size_t>(2 * mx + 1))) - mx;
  return shift_image(image, dy, dx);
}

/// Fixed binary block mix through the same kernel as learned fusion.
inline Image manual_grid_mix(const Image& a, const Image& b, const WeightGrid<double>& pattern) {
  for (double v : pattern.weights.values()) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("manual_grid_mix: pattern must be binary");
  }
  return fuse_images(a, b, expand_weight_grid(pattern, a.dim(1), a.dim(2)));
}

inline WeightGrid<double> pattern_grid(const AugmentationSpec& spec) {
  Tensor<double> w({spec.manual_grid, spec.manual_grid});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = spec.manual_pattern[i];
  return {spec.manual_grid, w};
}

// ----------------------------------------------------------- feature level

template <typename T>
Tensor<T> gaussian_feature_augment(const Tensor<T>& features, double sigma, Rng& rng) {
  if (!(sigma >= 0)) throw std::invalid_argument("gaussian_feature_augment: sigma must be non-negative");
  if (sigma == 0) return features;
  Tensor<T> out = features;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : out.values()) v += static_cast<T>(noise(rng));
  return out;
}

template <typename T>
Tensor<T> manifold_mixup_embed(const Tensor<T>& a, const Tensor<T>& b, double lam) {
  if (a.shape() != b.shape()) throw std::invalid_argument("manifold_mixup_embed: shape mismatch");
  if (!(lam >= 0 && lam <= 1)) throw std::invalid_argument("manifold_mixup_embed: lam must lie in [0, 1]");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<T>(lam * a[i] + (1 - lam) * b[i]);
  return out;
}

// ------------------------------------------------------------ jitter cache

/// Jittered copies of the originals standing in for generator output.
/// Variants depend only on (seed, image id), so they are stable across runs
/// and episodes.
class JitterLookup final : public GeneratedLookup {
 public:
  JitterLookup(double magnitude, std::size_t variants, std::uint64_t seed)
      : magnitude_(magnitude), variants_(variants), seed_(seed) {}

  void add(const std::string& id, const Image& image) {
    if (store_.contains(id)) return;
    Rng rng = make_rng(seed_, streams::kAugment, fnv1a(id));
    std::vector<Image> out;
    for (std::size_t i = 0; i < variants_; ++i) out.push_back(jitter_augment(image, magnitude_, rng));
    store_.insert(id, std::move(out));
  }

  const std::vector<Image>& variants(const std::string& id) const override { return store_.variants(id); }

 private:
  double magnitude_;
  std::size_t variants_;
  std::uint64_t seed_;
  InMemoryLookup store_;
};

}  // namespace metairnet
