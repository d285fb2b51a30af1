#pragma once

// Single-image generator adaptation: optimize the latent vector, the class
// embedding and the BN modulation parameters of a frozen generator so that it
// reconstructs one target image, then sample nearby variants.

#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "metairnet/errors.hpp"
#include "metairnet/generator.hpp"
#include "metairnet/image.hpp"
#include "metairnet/optim.hpp"

namespace metairnet {

/// Maps a batch of images (N, 3, H, W) to an ordered list of feature maps.
template <typename T>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<Var<T>> features(const Var<T>& images) const = 0;
};

/// The image itself as the only feature map.
template <typename T>
class IdentityExtractor final : public FeatureExtractor<T> {
 public:
  std::vector<Var<T>> features(const Var<T>& images) const override { return {images}; }
};

/// A fixed stack of randomly initialised conv -> relu -> maxpool stages; the
/// output of every conv stage is a feature map. Stands in for a pretrained
/// network where none is available.
template <typename T>
class RandomConvExtractor final : public FeatureExtractor<T> {
 public:
  explicit RandomConvExtractor(std::uint64_t seed = 17, std::vector<std::size_t> widths = {16, 32, 32}) {
    Rng rng = make_rng(seed, streams::kInit, 0xfea7);
    std::size_t in = 3;
    for (std::size_t w : widths) {
      Conv2d<T> conv(in, w, 3, 1, 1, rng);
      weights_.push_back(constant(conv.weight.value()));
      biases_.push_back(constant(conv.bias.value()));
      in = w;
    }
  }

  std::vector<Var<T>> features(const Var<T>& images) const override {
    std::vector<Var<T>> out;
    Var<T> h = images;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      h = ops::relu(ops::conv2d(h, weights_[i], biases_[i], 1, 1));
      out.push_back(h);
      if (i + 1 < weights_.size() && h.dim(2) >= 2) h = ops::max_pool2d(h, 2);
    }
    return out;
  }

 private:
  std::vector<Var<T>> weights_, biases_;
};

template <typename T>
Var<T> perceptual_distance(const std::vector<Var<T>>& fa, const std::vector<Var<T>>& fb) {
  if (fa.empty() || fb.empty()) throw std::invalid_argument("feature extractor returned no feature maps");
  if (fa.size() != fb.size()) throw std::invalid_argument("feature lists differ in length");
  Var<T> total = ops::mse_loss(fa[0], fb[0]);
  for (std::size_t i = 1; i < fa.size(); ++i) total = ops::add(total, ops::mse_loss(fa[i], fb[i]));
  return total;
}

/// Sum over feature layers of the mean squared feature difference.
template <typename T>
T perceptual_distance(const Tensor<T>& a, const Tensor<T>& b, const FeatureExtractor<T>& extractor) {
  auto batch = [](const Tensor<T>& x) { return x.rank() == 3 ? x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}) : x; };
  return perceptual_distance(extractor.features(constant(batch(a))), extractor.features(constant(batch(b)))).item();
}

/// One-dimensional earth mover distance: mean |sort(z) - sort(r)|.
template <typename T>
T em_regularizer(const Tensor<T>& z, const Tensor<T>& r) {
  return ops::earth_mover_1d(constant(z), r).item();
}

template <typename T>
struct LossTerms {
  Var<T> total;
  T l1{};
  T perceptual{};
  T em{};
};

/// total = l1 + lambda_p * perceptual + lambda_z * em, where the EM term
/// compares the latent z with a standard-normal sample r.
template <typename T>
LossTerms<T> generator_loss(const Var<T>& generated, const Var<T>& target, const Var<T>& z, const Tensor<T>& r,
                            const FeatureExtractor<T>& extractor, T lambda_p, T lambda_z,
                            const std::vector<Var<T>>* target_features = nullptr) {
  if (generated.shape() != target.shape()) {
    throw std::invalid_argument("generator_loss: generated " + shape_string(generated.shape()) + " vs target " +
                                shape_string(target.shape()));
  }
  auto l1 = ops::l1_loss(generated, target);
  auto perc = perceptual_distance(extractor.features(generated),
                                  target_features ? *target_features : extractor.features(target));
  auto em = ops::earth_mover_1d(z, r);
  auto total = ops::add(ops::add(l1, ops::scale(perc, lambda_p)), ops::scale(em, lambda_z));
  return {total, l1.item(), perc.item(), em.item()};
}

/// Value-only variant on plain tensors.
template <typename T>
LossTerms<T> generator_loss(const Tensor<T>& generated, const Tensor<T>& target, const Tensor<T>& z,
                            const Tensor<T>& r, const FeatureExtractor<T>& extractor, T lambda_p, T lambda_z) {
  auto batch = [](const Tensor<T>& x) { return x.rank() == 3 ? x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}) : x; };
  return generator_loss(constant(batch(generated)), constant(batch(target)), constant(z), r, extractor, lambda_p,
                        lambda_z);
}

struct AdaptConfig {
  double lambda_p = 0.1;
  double lambda_z = 0.1;
  std::size_t steps = 500;
  double lr_noise = 0.01;
  double lr_bn = 0.0005;
  double perturb_sigma = 0.1;
  std::size_t num_variants = 10;
  /// Ablation: optimize only the noise and class embedding, keep BN fixed.
  bool noise_only = false;

  void validate() const {
    if (!(lambda_p >= 0 && lambda_z >= 0)) throw ConfigError("adapt: lambda_p and lambda_z must be non-negative");
    if (steps == 0) throw ConfigError("adapt: steps must be positive");
    if (!(lr_noise > 0 && lr_bn > 0)) throw ConfigError("adapt: learning rates must be positive");
    if (!(perturb_sigma >= 0)) throw ConfigError("adapt: perturb_sigma must be non-negative");
    if (num_variants == 0) throw ConfigError("adapt: num_variants must be positive");
  }
};

struct LossRecord {
  std::size_t step = 0;
  double total = 0, l1 = 0, perceptual = 0, em = 0;
};

template <typename T>
struct AdaptedGeneratorState {
  std::shared_ptr<const GeneratorWeights<T>> generator;
  NoiseVector<T> noise;
  BNParamSet<T> bn_params;
  std::vector<LossRecord> loss_trace;
};

template <typename T>
AdaptedGeneratorState<T> adapt_generator_to_image(const PretrainedGenerator<T>& generator, const Image& target,
                                                  const AdaptConfig& config, Rng& rng,
                                                  const FeatureExtractor<T>& extractor) {
  config.validate();
  const auto& arch = generator.arch();
  if (generator.bn.layers.empty()) throw ConfigError("generator has no batch-norm layers to adapt");
  if (target.shape() != Shape{3, arch.image_size, arch.image_size}) {
    throw DataError("target image " + shape_string(target.shape()) + " does not match generator output " +
                    std::to_string(arch.image_size) + "x" + std::to_string(arch.image_size));
  }

  const auto frozen = weight_vars(*generator.weights, false);
  auto z = parameter(normal_tensor<T>({1, arch.latent_dim}, rng));
  Var<T> e;
  if (arch.conditional) e = parameter(generator.mean_class_embedding().reshaped({1, arch.embed_dim}));
  auto bn = bn_vars(generator.bn, !config.noise_only);

  std::vector<Var<T>> noise_params{z};
  if (e.defined()) noise_params.push_back(e);
  std::vector<typename Adam<T>::Group> groups{{noise_params, static_cast<T>(config.lr_noise)}};
  if (!config.noise_only) groups.push_back({bn.all(), static_cast<T>(config.lr_bn)});
  Adam<T> optimizer(std::move(groups));

  Tensor<T> target_t(Shape{1, 3, arch.image_size, arch.image_size}, std::vector<T>(target.values().begin(), target.values().end()));
  const auto target_var = constant(std::move(target_t));
  const auto target_features = extractor.features(target_var);

  AdaptedGeneratorState<T> state;
  state.generator = generator.weights;
  state.loss_trace.reserve(config.steps);
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto r = normal_tensor<T>({arch.latent_dim}, rng);
    auto generated = generate(arch, frozen, bn, z, e);
    auto terms = generator_loss(generated, target_var, z, r, extractor, static_cast<T>(config.lambda_p),
                                static_cast<T>(config.lambda_z), &target_features);
    const T total = terms.total.item();
    if (!std::isfinite(static_cast<double>(total))) {
      throw NumericalError("non-finite generator loss at adaptation step " + std::to_string(step));
    }
    state.loss_trace.push_back({step, static_cast<double>(total), static_cast<double>(terms.l1),
                                static_cast<double>(terms.perceptual), static_cast<double>(terms.em)});
    optimizer.zero_grad();
    backward(terms.total);
    optimizer.step();
  }
  state.noise.latent = z.value().reshaped({arch.latent_dim});
  if (e.defined()) state.noise.class_embedding = e.value().reshaped({arch.embed_dim});
  state.bn_params = to_bn_params(bn);
  return state;
}

/// Renders G(z + eps_i) for k perturbations eps_i ~ N(0, sigma^2) of the latent.
template <typename T>
std::vector<Image> sample_perturbed_images(const AdaptedGeneratorState<T>& state, double sigma, std::size_t k,
                                           Rng& rng) {
  if (k == 0) throw std::invalid_argument("sample_perturbed_images: k must be at least 1");
  if (!(sigma >= 0)) throw std::invalid_argument("sample_perturbed_images: sigma must be non-negative");
  std::vector<Image> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    NoiseVector<T> noise = state.noise;
    if (sigma > 0) {
      const auto eps = normal_tensor<T>(noise.latent.shape(), rng, static_cast<T>(sigma));
      for (std::size_t j = 0; j < eps.size(); ++j) noise.latent[j] += eps[j];
    }
    auto img = generate_image(*state.generator, state.bn_params, noise);
    out.push_back(img.template cast<float>());
  }
  return out;
}

// ------------------------------------------------------ scratch training

struct GeneratorTrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  double lr = 0.002;
  double lr_latent = 0.01;
  double lambda_p = 0.1;
  double lambda_z = 0.1;
  std::uint64_t seed = 0;
};

struct GeneratorTrainReport {
  std::vector<double> epoch_loss;
};

/// Trains a generator without a discriminator: every training image owns a
/// latent code, every class an embedding, and codes, embeddings and weights
/// are fitted jointly to reconstruct the images under the adaptation loss.
/// `labels` must be dense in [0, arch.num_classes).
template <typename T>
PretrainedGenerator<T> train_generator(const std::vector<Image>& images, const std::vector<std::size_t>& labels,
                                       const GeneratorArch& arch, const GeneratorTrainConfig& config,
                                       const FeatureExtractor<T>& extractor, GeneratorTrainReport* report = nullptr) {
  if (images.empty() || images.size() != labels.size()) throw DataError("generator training needs labelled images");
  for (std::size_t l : labels) {
    if (l >= arch.num_classes) throw DataError("generator training label out of range: " + std::to_string(l));
  }
  Rng rng = make_rng(config.seed, streams::kGenerator, 0);
  auto init = init_generator<T>(arch, rng);
  auto weights = weight_vars(*init.weights, true);
  auto bn = bn_vars(init.bn, true);
  auto latents = parameter(normal_tensor<T>({images.size(), arch.latent_dim}, rng));
  Var<T> table;
  if (arch.conditional) table = parameter(init.weights->class_table);

  std::vector<Var<T>> net{weights.input_weight, weights.input_bias, weights.rgb_weight, weights.rgb_bias};
  for (std::size_t i = 0; i < weights.up_weight.size(); ++i) {
    net.push_back(weights.up_weight[i]);
    net.push_back(weights.up_bias[i]);
  }
  for (const auto& v : bn.all()) net.push_back(v);
  std::vector<Var<T>> codes{latents};
  if (table.defined()) codes.push_back(table);
  Adam<T> optimizer({{net, static_cast<T>(config.lr)}, {codes, static_cast<T>(config.lr_latent)}});

  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t pixels = images[0].size();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double epoch_total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + end), cls;
      Tensor<T> target({idx.size(), 3, arch.image_size, arch.image_size});
      for (std::size_t b = 0; b < idx.size(); ++b) {
        std::copy(images[idx[b]].values().begin(), images[idx[b]].values().end(), target.data() + b * pixels);
        cls.push_back(labels[idx[b]]);
      }
      auto z = ops::gather_rows(latents, idx);
      Var<T> e;
      if (table.defined()) e = ops::gather_rows(table, cls);
      auto generated = generate(arch, weights, bn, z, e);
      auto target_var = constant(std::move(target));
      auto loss = ops::add(ops::l1_loss(generated, target_var),
                           ops::scale(perceptual_distance(extractor.features(generated), extractor.features(target_var)),
                                      static_cast<T>(config.lambda_p)));
      for (std::size_t b = 0; b < idx.size(); ++b) {
        auto em = ops::earth_mover_1d(ops::slice_rows(z, b, b + 1), normal_tensor<T>({arch.latent_dim}, rng));
        loss = ops::add(loss, ops::scale(em, static_cast<T>(config.lambda_z / static_cast<double>(idx.size()))));
      }
      if (!std::isfinite(static_cast<double>(loss.item()))) {
        throw NumericalError("non-finite loss in generator training, epoch " + std::to_string(epoch));
      }
      optimizer.zero_grad();
      backward(loss);
      optimizer.step();
      epoch_total += static_cast<double>(loss.item());
      ++batches;
    }
    if (report) report->epoch_loss.push_back(epoch_total / static_cast<double>(batches));
    spdlog::debug("generator epoch {} loss {:.4f}", epoch, epoch_total / static_cast<double>(batches));
  }

  PretrainedGenerator<T> out;
  auto w = std::make_shared<GeneratorWeights<T>>(to_weights(weights, *init.weights));
  if (table.defined()) w->class_table = table.value();
  out.weights = std::move(w);
  out.bn = to_bn_params(bn);
  return out;
}

}  // namespace metairnet
