#pragma once

// Conditional transposed-convolution generator. The frozen weights and the
// batch-norm modulation parameters are kept apart so that single-image
// adaptation can only ever touch the latter.
//
// Layout for image size 4 * 2^L with channel list c[0..L]:
//   [z ; e] -> linear -> (c0, 4, 4)
//   L x { norm(gamma_i, beta_i) -> relu -> convT 4x4/2 (c_i -> c_{i+1}) }
//   norm(gamma_L, beta_L) -> relu -> conv 3x3 (c_L -> 3) -> tanh
//
// Each norm uses the statistics of its own sample (batch norm with batch
// size one). In the conditional variant gamma = 1 + Wg e + bg and
// beta = Wb e + bb; otherwise gamma = bg and beta = bb directly.

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "metairnet/errors.hpp"
#include "metairnet/layers.hpp"
#include "metairnet/ops.hpp"
#include "metairnet/rng.hpp"

namespace metairnet {

struct GeneratorArch {
  std::size_t latent_dim = 32;
  std::size_t embed_dim = 32;
  std::size_t num_classes = 1;
  std::size_t image_size = 64;
  std::vector<std::size_t> channels{256, 128, 64, 32, 32};
  bool conditional = true;
  double eps = 1e-5;

  std::size_t upsamplings() const { return channels.empty() ? 0 : channels.size() - 1; }
  std::size_t bn_layers() const { return channels.size(); }

  void validate() const {
    if (channels.empty()) throw ConfigError("generator has no batch-norm layers");
    if (image_size != (std::size_t{4} << upsamplings())) {
      throw ConfigError("generator image_size " + std::to_string(image_size) + " must equal 4 * 2^" +
                        std::to_string(upsamplings()));
    }
    if (latent_dim == 0) throw ConfigError("generator latent_dim must be positive");
  }
};

/// The reduced-width variant used for scratch training (a quarter of the
/// channels of the full layout).
inline GeneratorArch quarter_width(GeneratorArch arch) {
  for (auto& c : arch.channels) c = std::max<std::size_t>(1, c / 4);
  return arch;
}

template <typename T>
struct NoiseVector {
  Tensor<T> latent;           // (latent_dim)
  Tensor<T> class_embedding;  // (embed_dim), empty for unconditional generators
};

template <typename T>
struct BNLayerParams {
  Tensor<T> gamma_weight;  // (C, E); empty when unconditional
  Tensor<T> gamma_bias;    // (C)
  Tensor<T> beta_weight;   // (C, E); empty when unconditional
  Tensor<T> beta_bias;     // (C)

  bool operator==(const BNLayerParams&) const = default;
};

template <typename T>
struct BNParamSet {
  std::vector<BNLayerParams<T>> layers;
  T eps = T(1e-5);  // numerical constant inside the normalization, never trained

  bool operator==(const BNParamSet&) const = default;
};

/// Everything outside the BN modulation. Shared read-only between adaptation runs.
template <typename T>
struct GeneratorWeights {
  GeneratorArch arch;
  Tensor<T> input_weight;  // (c0 * 16, latent + embed)
  Tensor<T> input_bias;
  std::vector<Tensor<T>> up_weight;  // (c_i, c_{i+1}, 4, 4)
  std::vector<Tensor<T>> up_bias;
  Tensor<T> rgb_weight;   // (3, c_L, 3, 3)
  Tensor<T> rgb_bias;
  Tensor<T> class_table;  // (num_classes, embed) learned class embeddings

  bool operator==(const GeneratorWeights& o) const {
    return input_weight == o.input_weight && input_bias == o.input_bias && up_weight == o.up_weight &&
           up_bias == o.up_bias && rgb_weight == o.rgb_weight && rgb_bias == o.rgb_bias &&
           class_table == o.class_table;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor<T>*>> out{{"input.weight", &input_weight},
                                                        {"input.bias", &input_bias}};
    for (std::size_t i = 0; i < up_weight.size(); ++i) {
      out.emplace_back("up" + std::to_string(i) + ".weight", &up_weight[i]);
      out.emplace_back("up" + std::to_string(i) + ".bias", &up_bias[i]);
    }
    out.emplace_back("rgb.weight", &rgb_weight);
    out.emplace_back("rgb.bias", &rgb_bias);
    out.emplace_back("class_table", &class_table);
    return out;
  }
};

/// A generator as loaded from a checkpoint: frozen weights plus the BN
/// modulation it was trained with.
template <typename T>
struct PretrainedGenerator {
  std::shared_ptr<const GeneratorWeights<T>> weights;
  BNParamSet<T> bn;

  const GeneratorArch& arch() const { return weights->arch; }

  /// Mean of the learned class embeddings (zero when none were learned).
  Tensor<T> mean_class_embedding() const {
    const auto& table = weights->class_table;
    Tensor<T> out({arch().embed_dim});
    if (table.empty() || arch().embed_dim == 0) return out;
    const std::size_t rows = table.dim(0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < arch().embed_dim; ++k) out[k] += table[r * arch().embed_dim + k] / static_cast<T>(rows);
    return out;
  }
};

template <typename T>
PretrainedGenerator<T> init_generator(const GeneratorArch& arch, Rng& rng) {
  arch.validate();
  auto w = std::make_shared<GeneratorWeights<T>>();
  w->arch = arch;
  const std::size_t in = arch.latent_dim + (arch.conditional ? arch.embed_dim : 0);
  Linear<T> input(in, arch.channels[0] * 16, rng);
  w->input_weight = input.weight.value();
  w->input_bias = input.bias.value();
  for (std::size_t i = 0; i < arch.upsamplings(); ++i) {
    ConvTranspose2d<T> up(arch.channels[i], arch.channels[i + 1], 4, 2, 1, rng);
    w->up_weight.push_back(up.weight.value());
    w->up_bias.push_back(up.bias.value());
  }
  Conv2d<T> rgb(arch.channels.back(), 3, 3, 1, 1, rng);
  rgb.weight.mutable_value() = normal_tensor<T>(rgb.weight.shape(), rng, T(0.02));
  w->rgb_weight = rgb.weight.value();
  w->rgb_bias = rgb.bias.value();
  if (arch.conditional) w->class_table = normal_tensor<T>({arch.num_classes, arch.embed_dim}, rng);

  PretrainedGenerator<T> gen;
  gen.bn.eps = static_cast<T>(arch.eps);
  for (std::size_t c : arch.channels) {
    BNLayerParams<T> layer;
    if (arch.conditional) {
      layer.gamma_weight = Tensor<T>({c, arch.embed_dim});
      layer.beta_weight = Tensor<T>({c, arch.embed_dim});
      layer.gamma_bias = Tensor<T>({c});
    } else {
      layer.gamma_bias = Tensor<T>({c}, T{1});
    }
    layer.beta_bias = Tensor<T>({c});
    gen.bn.layers.push_back(std::move(layer));
  }
  gen.weights = std::move(w);
  return gen;
}

// ------------------------------------------------------------ autograd views

template <typename T>
struct GeneratorVars {
  Var<T> input_weight, input_bias;
  std::vector<Var<T>> up_weight, up_bias;
  Var<T> rgb_weight, rgb_bias;
};

template <typename T>
struct BNVars {
  struct Layer {
    Var<T> gamma_weight, gamma_bias, beta_weight, beta_bias;
  };
  std::vector<Layer> layers;
  T eps = T(1e-5);

  std::vector<Var<T>> all() const {
    std::vector<Var<T>> out;
    for (const auto& l : layers) {
      for (const auto* v : {&l.gamma_weight, &l.gamma_bias, &l.beta_weight, &l.beta_bias}) {
        if (v->defined()) out.push_back(*v);
      }
    }
    return out;
  }
};

template <typename T>
GeneratorVars<T> weight_vars(const GeneratorWeights<T>& w, bool trainable) {
  auto wrap = [trainable](const Tensor<T>& t) { return trainable ? parameter(t) : constant(t); };
  GeneratorVars<T> v;
  v.input_weight = wrap(w.input_weight);
  v.input_bias = wrap(w.input_bias);
  for (std::size_t i = 0; i < w.up_weight.size(); ++i) {
    v.up_weight.push_back(wrap(w.up_weight[i]));
    v.up_bias.push_back(wrap(w.up_bias[i]));
  }
  v.rgb_weight = wrap(w.rgb_weight);
  v.rgb_bias = wrap(w.rgb_bias);
  return v;
}

template <typename T>
BNVars<T> bn_vars(const BNParamSet<T>& bn, bool trainable) {
  auto wrap = [trainable](const Tensor<T>& t) {
    if (t.empty()) return Var<T>();
    return trainable ? parameter(t) : constant(t);
  };
  BNVars<T> v;
  v.eps = bn.eps;
  for (const auto& l : bn.layers) {
    v.layers.push_back({wrap(l.gamma_weight), wrap(l.gamma_bias), wrap(l.beta_weight), wrap(l.beta_bias)});
  }
  return v;
}

template <typename T>
GeneratorWeights<T> to_weights(const GeneratorVars<T>& v, GeneratorWeights<T> base) {
  base.input_weight = v.input_weight.value();
  base.input_bias = v.input_bias.value();
  for (std::size_t i = 0; i < v.up_weight.size(); ++i) {
    base.up_weight[i] = v.up_weight[i].value();
    base.up_bias[i] = v.up_bias[i].value();
  }
  base.rgb_weight = v.rgb_weight.value();
  base.rgb_bias = v.rgb_bias.value();
  return base;
}

template <typename T>
BNParamSet<T> to_bn_params(const BNVars<T>& v) {
  BNParamSet<T> out;
  out.eps = v.eps;
  auto grab = [](const Var<T>& x) { return x.defined() ? x.value() : Tensor<T>(); };
  for (const auto& l : v.layers) {
    out.layers.push_back({grab(l.gamma_weight), grab(l.gamma_bias), grab(l.beta_weight), grab(l.beta_bias)});
  }
  return out;
}

/// Scale and shift of one norm layer for every sample, each (N, C).
template <typename T>
std::pair<Var<T>, Var<T>> modulation(const typename BNVars<T>::Layer& layer, const Var<T>& embedding,
                                     std::size_t batch) {
  if (layer.gamma_weight.defined()) {
    auto gamma = ops::add_scalar(ops::linear(embedding, layer.gamma_weight, layer.gamma_bias), T{1});
    auto beta = ops::linear(embedding, layer.beta_weight, layer.beta_bias);
    return {gamma, beta};
  }
  return {ops::repeat_rows(layer.gamma_bias, batch), ops::repeat_rows(layer.beta_bias, batch)};
}

/// Generates a batch of images in [-1, 1]; latent (N, d), embedding (N, E)
/// (ignored by unconditional generators).
template <typename T>
Var<T> generate(const GeneratorArch& arch, const GeneratorVars<T>& w, const BNVars<T>& bn,
                const Var<T>& latent, const Var<T>& embedding) {
  const std::size_t n = latent.dim(0);
  if (bn.layers.size() != arch.bn_layers()) {
    throw ConfigError("generator expects " + std::to_string(arch.bn_layers()) + " batch-norm layers, got " +
                      std::to_string(bn.layers.size()));
  }
  Var<T> input = arch.conditional ? ops::concat_features(latent, embedding) : latent;
  auto h = ops::reshape(ops::linear(input, w.input_weight, w.input_bias), Shape{n, arch.channels[0], 4, 4});
  for (std::size_t i = 0; i <= arch.upsamplings(); ++i) {
    auto [gamma, beta] = modulation(bn.layers[i], embedding, n);
    h = ops::relu(ops::modulated_norm(h, gamma, beta, bn.eps));
    if (i < arch.upsamplings()) {
      h = ops::conv_transpose2d(h, w.up_weight[i], w.up_bias[i], 2, 1);
    }
  }
  return ops::tanh(ops::conv2d(h, w.rgb_weight, w.rgb_bias, 1, 1));
}

/// Inference helper: one image from a noise vector and BN parameter set.
template <typename T>
Tensor<T> generate_image(const GeneratorWeights<T>& weights, const BNParamSet<T>& bn, const NoiseVector<T>& noise) {
  const auto& arch = weights.arch;
  auto latent = constant(noise.latent.reshaped({1, arch.latent_dim}));
  Var<T> embedding;
  if (arch.conditional) embedding = constant(noise.class_embedding.reshaped({1, arch.embed_dim}));
  auto out = generate(arch, weight_vars(weights, false), bn_vars(bn, false), latent, embedding);
  return batch_item(out.value(), 0);
}

}  // namespace metairnet
