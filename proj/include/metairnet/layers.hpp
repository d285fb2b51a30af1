#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "metairnet/autograd.hpp"
#include "metairnet/ops.hpp"
#include "metairnet/rng.hpp"

namespace metairnet {

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;
template <typename T>
using BufferList = std::vector<NamedBuffer<T>>;

template <typename T>
void zero_grad(const ParamList<T>& params) {
  for (const auto& p : params) {
    Var<T> v = p.var;
    v.zero_grad();
  }
}

/// Deep copy of parameter values (for snapshots and best-model selection).
template <typename T>
std::vector<Tensor<T>> snapshot(const ParamList<T>& params) {
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.var.value());
  return out;
}

template <typename T>
void restore(const ParamList<T>& params, const std::vector<Tensor<T>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var<T> v = params[i].var;
    v.mutable_value() = values[i];
  }
}

template <typename T>
struct Linear {
  Var<T> weight;  // (out, in)
  Var<T> bias;    // (out)

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng) {
    const T bound = T{1} / std::sqrt(static_cast<T>(in));
    weight = parameter(uniform_tensor<T>({out, in}, rng, -bound, bound));
    bias = parameter(Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct Conv2d {
  Var<T> weight;  // (out, in, k, k)
  Var<T> bias;    // (out) or undefined
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t pad_,
         Rng& rng, bool with_bias = true)
      : stride(stride_), pad(pad_) {
    const T stddev = std::sqrt(T{2} / static_cast<T>(in * kernel * kernel));
    weight = parameter(normal_tensor<T>({out, in, kernel, kernel}, rng, stddev));
    if (with_bias) bias = parameter(Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct ConvTranspose2d {
  Var<T> weight;  // (in, out, k, k)
  Var<T> bias;
  std::size_t stride = 2;
  std::size_t pad = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
                  std::size_t pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    // Each output pixel receives (kernel / stride)^2 taps per input channel.
    const T fan_in = static_cast<T>(in * kernel * kernel) / static_cast<T>(stride * stride);
    weight = parameter(normal_tensor<T>({in, out, kernel, kernel}, rng, std::sqrt(T{2} / fan_in)));
    bias = parameter(Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const {
    return ops::conv_transpose2d(x, weight, bias, stride, pad);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct BatchNorm {
  Var<T> gamma;
  Var<T> beta;
  ops::RunningStats<T> stats;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels)
      : gamma(parameter(Tensor<T>({channels}, T{1}))),
        beta(parameter(Tensor<T>({channels}))),
        stats{Tensor<T>({channels}), Tensor<T>({channels}, T{1})} {}

  /// Training mode normalizes with batch statistics and updates the running
  /// statistics; inference mode uses the running statistics only.
  Var<T> operator()(const Var<T>& x, bool training) {
    return ops::batch_norm(x, gamma, beta, &stats, training, momentum, eps);
  }
  Var<T> infer(const Var<T>& x) const {
    return ops::batch_norm(x, gamma, beta, const_cast<ops::RunningStats<T>*>(&stats), false,
                           momentum, eps);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
  void collect_buffers(BufferList<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".running_mean", &stats.mean});
    out.push_back({prefix + ".running_var", &stats.var});
  }
};

}  // namespace metairnet
