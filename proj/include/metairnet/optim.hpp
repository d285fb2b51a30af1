#pragma once

#include <cmath>
#include <vector>

#include "metairnet/autograd.hpp"

namespace metairnet {

/// Adam with per-group learning rates. Parameters without a gradient after
/// backward are left untouched.
template <typename T>
class Adam {
 public:
  struct Group {
    std::vector<Var<T>> params;
    T lr;
  };

  explicit Adam(std::vector<Group> groups, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& g : groups_) {
      for (const auto& p : g.params) {
        m_.emplace_back(p.shape());
        v_.emplace_back(p.shape());
      }
    }
  }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params) p.zero_grad();
  }

  void step() {
    ++t_;
    const T c1 = T{1} - std::pow(beta1_, static_cast<T>(t_));
    const T c2 = T{1} - std::pow(beta2_, static_cast<T>(t_));
    std::size_t slot = 0;
    for (auto& g : groups_) {
      for (auto& p : g.params) {
        auto& m = m_[slot];
        auto& v = v_[slot];
        ++slot;
        if (!p.has_grad()) continue;
        auto& value = p.mutable_value();
        const auto& grad = p.grad();
        for (std::size_t i = 0; i < value.size(); ++i) {
          m[i] = beta1_ * m[i] + (T{1} - beta1_) * grad[i];
          v[i] = beta2_ * v[i] + (T{1} - beta2_) * grad[i] * grad[i];
          value[i] -= g.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
      }
    }
  }

  long steps() const { return t_; }

 private:
  std::vector<Group> groups_;
  std::vector<Tensor<T>> m_, v_;
  T beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace metairnet
