#pragma once

#include <memory>
#include <string>
#include <vector>

#include "metairnet/layers.hpp"

namespace metairnet {

/// Maps (N, 3, H, W) images to (N, feature_dim) embeddings.
template <typename T>
class Encoder {
 public:
  virtual ~Encoder() = default;
  /// Training mode uses batch statistics in normalization layers and updates
  /// their running estimates.
  virtual Var<T> forward(const Var<T>& images, bool training) = 0;
  /// Inference mode; never mutates state.
  virtual Var<T> infer(const Var<T>& images) const = 0;
  virtual std::size_t feature_dim() const = 0;
  virtual void collect(ParamList<T>& out, const std::string& prefix) const = 0;
  virtual void collect_buffers(BufferList<T>& out, const std::string& prefix) = 0;
  virtual std::unique_ptr<Encoder<T>> clone() const = 0;
};

struct ConvEncoderConfig {
  std::size_t depth = 4;
  std::size_t width = 64;
  std::size_t image_size = 64;
};

/// `depth` blocks of conv3x3 -> batch norm -> relu -> maxpool2 ("Conv-4" for depth 4).
template <typename T>
class ConvEncoder final : public Encoder<T> {
 public:
  ConvEncoder(const ConvEncoderConfig& config, Rng& rng) : config_(config) {
    std::size_t in = 3, size = config.image_size;
    for (std::size_t i = 0; i < config.depth; ++i) {
      if (size < 2) throw std::invalid_argument("ConvEncoder: image too small for depth " + std::to_string(config.depth));
      convs_.emplace_back(in, config.width, 3, 1, 1, rng, false);
      norms_.emplace_back(config.width);
      in = config.width;
      size /= 2;
    }
    feature_dim_ = config.width * size * size;
  }

  Var<T> forward(const Var<T>& images, bool training) override {
    Var<T> h = images;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = ops::max_pool2d(ops::relu(norms_[i](convs_[i](h), training)), 2);
    }
    return ops::flatten(h);
  }

  Var<T> infer(const Var<T>& images) const override {
    Var<T> h = images;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = ops::max_pool2d(ops::relu(norms_[i].infer(convs_[i](h))), 2);
    }
    return ops::flatten(h);
  }

  std::size_t feature_dim() const override { return feature_dim_; }

  void collect(ParamList<T>& out, const std::string& prefix) const override {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].collect(out, prefix + ".conv" + std::to_string(i));
      norms_[i].collect(out, prefix + ".bn" + std::to_string(i));
    }
  }

  void collect_buffers(BufferList<T>& out, const std::string& prefix) override {
    for (std::size_t i = 0; i < norms_.size(); ++i) norms_[i].collect_buffers(out, prefix + ".bn" + std::to_string(i));
  }

  /// Deep copy: fresh parameter nodes holding the same values.
  std::unique_ptr<Encoder<T>> clone() const override {
    auto copy = std::make_unique<ConvEncoder<T>>(*this);
    for (auto& c : copy->convs_) {
      c.weight = parameter(c.weight.value());
      if (c.bias.defined()) c.bias = parameter(c.bias.value());
    }
    for (auto& n : copy->norms_) {
      n.gamma = parameter(n.gamma.value());
      n.beta = parameter(n.beta.value());
    }
    return copy;
  }

  const ConvEncoderConfig& config() const { return config_; }

 private:
  ConvEncoderConfig config_;
  std::vector<Conv2d<T>> convs_;
  std::vector<BatchNorm<T>> norms_;
  std::size_t feature_dim_ = 0;
};

}  // namespace metairnet
