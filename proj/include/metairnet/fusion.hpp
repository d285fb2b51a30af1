#pragma once

// Block-wise image fusion: a pair of encoders looks at an original image and
// a generated variant, a linear head predicts a g x g grid of mixing weights,
// and the fused image is w * original + (1 - w) * generated per block.

#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "metairnet/encoder.hpp"
#include "metairnet/errors.hpp"
#include "metairnet/grid.hpp"
#include "metairnet/image.hpp"

namespace metairnet {

template <typename T>
struct WeightGrid {
  std::size_t g = 3;
  Tensor<T> weights;  // (g, g), row-major

  T at(std::size_t i, std::size_t j) const { return weights[i * g + j]; }
};

struct FusionConfig {
  std::size_t grid = 3;
  ConvEncoderConfig encoder;
};

template <typename T>
class FusionNetwork {
 public:
  FusionNetwork(const FusionConfig& config, Rng& rng)
      : grid_(config.grid),
        original_encoder_(std::make_unique<ConvEncoder<T>>(config.encoder, rng)),
        generated_encoder_(std::make_unique<ConvEncoder<T>>(config.encoder, rng)),
        head_(original_encoder_->feature_dim() * 2, config.grid * config.grid, rng) {
    if (config.grid == 0) throw ConfigError("fusion grid size must be positive");
  }

  FusionNetwork(const FusionNetwork& other)
      : grid_(other.grid_),
        original_encoder_(other.original_encoder_->clone()),
        generated_encoder_(other.generated_encoder_->clone()),
        head_(other.head_) {
    head_.weight = parameter(other.head_.weight.value());
    head_.bias = parameter(other.head_.bias.value());
  }

  /// Pre-squash logits, (N, g*g).
  Var<T> logits(const Var<T>& original, const Var<T>& generated, bool training) {
    check_pair(original, generated);
    auto fo = original_encoder_->forward(original, training);
    auto fg = generated_encoder_->forward(generated, training);
    return head_(ops::concat_features(fo, fg));
  }

  /// Mixing weights in (0, 1), (N, g*g).
  Var<T> weights(const Var<T>& original, const Var<T>& generated, bool training) {
    return ops::sigmoid(logits(original, generated, training));
  }

  Var<T> infer_weights(const Var<T>& original, const Var<T>& generated) const {
    check_pair(original, generated);
    auto fo = original_encoder_->infer(original);
    auto fg = generated_encoder_->infer(generated);
    return ops::sigmoid(head_(ops::concat_features(fo, fg)));
  }

  std::size_t grid_size() const { return grid_; }
  Linear<T>& head() { return head_; }
  const Linear<T>& head() const { return head_; }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    original_encoder_->collect(out, prefix + ".original");
    generated_encoder_->collect(out, prefix + ".generated");
    head_.collect(out, prefix + ".head");
  }
  void collect_buffers(BufferList<T>& out, const std::string& prefix) {
    original_encoder_->collect_buffers(out, prefix + ".original");
    generated_encoder_->collect_buffers(out, prefix + ".generated");
  }

 private:
  static void check_pair(const Var<T>& original, const Var<T>& generated) {
    if (original.shape() != generated.shape()) {
      throw std::invalid_argument("fusion input size mismatch: " + shape_string(original.shape()) + " vs " +
                                  shape_string(generated.shape()));
    }
  }

  std::size_t grid_;
  std::unique_ptr<Encoder<T>> original_encoder_;
  std::unique_ptr<Encoder<T>> generated_encoder_;
  Linear<T> head_;
};

namespace detail {
template <typename T>
Var<T> as_batch(const Image& image) {
  return constant(image.cast<T>().reshaped({1, image.dim(0), image.dim(1), image.dim(2)}));
}
}  // namespace detail

template <typename T>
WeightGrid<T> predict_weight_grid(const FusionNetwork<T>& net, const Image& original, const Image& generated) {
  if (original.shape() != generated.shape()) {
    throw std::invalid_argument("predict_weight_grid: " + shape_string(original.shape()) + " vs " +
                                shape_string(generated.shape()));
  }
  auto w = net.infer_weights(detail::as_batch<T>(original), detail::as_batch<T>(generated));
  const std::size_t g = net.grid_size();
  return {g, w.value().reshaped({g, g})};
}

/// Block-constant (H, W) map: cell (i, j) covers rows [floor(iH/g), floor((i+1)H/g))
/// and the analogous columns.
template <typename T>
Tensor<T> expand_weight_grid(const WeightGrid<T>& grid, std::size_t height, std::size_t width) {
  if (height < grid.g || width < grid.g) {
    throw std::invalid_argument("expand_weight_grid: image " + std::to_string(height) + "x" + std::to_string(width) +
                                " smaller than grid " + std::to_string(grid.g));
  }
  const auto rows = block_index(grid.g, height);
  const auto cols = block_index(grid.g, width);
  Tensor<T> out({height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) out[y * width + x] = grid.at(rows[y], cols[x]);
  return out;
}

/// weight_map * original + (1 - weight_map) * generated, the map shared across channels.
template <typename T>
Image fuse_images(const Image& original, const Image& generated, const Tensor<T>& weight_map) {
  if (original.shape() != generated.shape() || original.rank() != 3 ||
      weight_map.shape() != Shape{original.dim(1), original.dim(2)}) {
    throw std::invalid_argument("fuse_images: shapes " + shape_string(original.shape()) + ", " +
                                shape_string(generated.shape()) + ", map " + shape_string(weight_map.shape()));
  }
  for (const T v : weight_map.values()) {
    if (!(v >= T{0} && v <= T{1})) throw std::invalid_argument("fuse_images: weight outside [0, 1]");
  }
  const std::size_t plane = weight_map.size();
  Image out(original.shape());
  for (std::size_t c = 0; c < original.dim(0); ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i = c * plane + p;
      const T w = weight_map[p];
      out[i] = static_cast<float>(w * static_cast<T>(original[i]) + (T{1} - w) * static_cast<T>(generated[i]));
    }
  return out;
}

// ------------------------------------------------------- support augmentation

/// Source of cached generator variants, keyed by image id.
class GeneratedLookup {
 public:
  virtual ~GeneratedLookup() = default;
  /// Throws DataError naming the image when nothing is cached for it.
  virtual const std::vector<Image>& variants(const std::string& image_id) const = 0;
};

class InMemoryLookup final : public GeneratedLookup {
 public:
  void insert(const std::string& id, std::vector<Image> images) { store_[id] = std::move(images); }
  bool contains(const std::string& id) const { return store_.count(id) > 0; }
  std::size_t size() const { return store_.size(); }

  const std::vector<Image>& variants(const std::string& image_id) const override {
    auto it = store_.find(image_id);
    if (it == store_.end()) throw DataError("no generated variants cached for image " + image_id);
    return it->second;
  }

 private:
  std::unordered_map<std::string, std::vector<Image>> store_;
};

/// Original support entries followed by, for each original in order, its
/// n_aug fused images.
template <typename T>
struct AugmentedSupport {
  Var<T> images;                   // (N * (1 + n_aug), 3, H, W)
  std::vector<std::size_t> labels;
  std::vector<std::size_t> source; // index of the original support entry
  std::vector<int> variant;        // cached variant used, -1 for originals
  Var<T> weights;                  // (N * n_aug, g * g); undefined when n_aug == 0
};

/// Produces (K, g*g) mixing weights for K (original, generated) pairs.
template <typename T>
using WeightSource = std::function<Var<T>(const Var<T>& originals, const Var<T>& generated)>;

/// Draws n_aug distinct cached variants per support image (uniformly, from
/// `rng`), and appends the fused images produced with `weight_source`.
template <typename T>
AugmentedSupport<T> augment_support_set(const Var<T>& support, const std::vector<std::string>& ids,
                                        const std::vector<std::size_t>& labels, const GeneratedLookup& lookup,
                                        std::size_t n_aug, std::size_t grid, Rng& rng,
                                        const WeightSource<T>& weight_source) {
  const std::size_t n = support.dim(0);
  if (ids.size() != n || labels.size() != n) throw std::invalid_argument("augment_support_set: ids/labels size");
  AugmentedSupport<T> out;
  out.labels = labels;
  for (std::size_t i = 0; i < n; ++i) {
    out.source.push_back(i);
    out.variant.push_back(-1);
  }
  if (n_aug == 0) {
    out.images = support;
    return out;
  }
  const std::size_t per_image = support.size() / n;
  Tensor<T> generated({n * n_aug, support.dim(1), support.dim(2), support.dim(3)});
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& cached = lookup.variants(ids[i]);
    if (cached.size() < n_aug) {
      throw DataError("image " + ids[i] + " has " + std::to_string(cached.size()) + " cached variants, need " +
                      std::to_string(n_aug));
    }
    std::vector<std::size_t> pick(cached.size());
    std::iota(pick.begin(), pick.end(), 0);
    for (std::size_t j = 0; j < n_aug; ++j) {
      std::swap(pick[j], pick[j + uniform_index(rng, pick.size() - j)]);
      const Image& img = cached[pick[j]];
      if (img.size() != per_image) throw DataError("cached variant of image " + ids[i] + " has the wrong size");
      std::copy(img.values().begin(), img.values().end(), generated.data() + (i * n_aug + j) * per_image);
      rows.push_back(i);
      out.labels.push_back(labels[i]);
      out.source.push_back(i);
      out.variant.push_back(static_cast<int>(pick[j]));
    }
  }
  auto originals = ops::gather_rows(support, rows);
  auto gen = constant(std::move(generated));
  out.weights = weight_source(originals, gen);
  out.images = ops::concat<T>({support, ops::fuse_blocks(originals, gen, out.weights, grid)});
  return out;
}

template <typename T>
AugmentedSupport<T> augment_support_set(const Var<T>& support, const std::vector<std::string>& ids,
                                        const std::vector<std::size_t>& labels, const GeneratedLookup& lookup,
                                        FusionNetwork<T>& net, std::size_t n_aug, Rng& rng, bool training) {
  return augment_support_set<T>(support, ids, labels, lookup, n_aug, net.grid_size(), rng,
                                [&](const Var<T>& o, const Var<T>& g) {
                                  return training ? net.weights(o, g, true) : net.infer_weights(o, g);
                                });
}

}  // namespace metairnet
