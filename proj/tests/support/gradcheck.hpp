#pragma once

// Central finite-difference oracle. Independent of the autograd path: it only
// reads and perturbs leaf values and re-evaluates the scalar objective.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "metairnet/autograd.hpp"

namespace metairnet::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::abs(analytic) + std::abs(numeric);
  if (denom < 1e-9) return 0.0;
  return std::abs(analytic - numeric) / denom;
}

/// Checks d objective / d leaf at `per_leaf` randomly sampled coordinates of
/// each leaf. `objective` must rebuild the graph from the current leaf values.
template <typename T>
GradCheckResult check_gradients(const std::function<Var<T>()>& objective,
                                std::vector<std::pair<std::string, Var<T>>> leaves,
                                std::size_t per_leaf, std::uint64_t seed, T step = T(1e-6)) {
  for (auto& [name, leaf] : leaves) leaf.zero_grad();
  Var<T> loss = objective();
  backward(loss);
  std::vector<Tensor<T>> analytic;
  for (auto& [name, leaf] : leaves) {
    analytic.push_back(leaf.has_grad() ? leaf.grad() : Tensor<T>(leaf.shape()));
  }

  std::mt19937_64 rng(seed);
  GradCheckResult result;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto& leaf = leaves[l].second;
    const std::size_t count = std::min(per_leaf, leaf.size());
    std::vector<std::size_t> coords(leaf.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    std::shuffle(coords.begin(), coords.end(), rng);
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t i = coords[c];
      const T saved = leaf.value()[i];
      leaf.mutable_value()[i] = saved + step;
      const double up = static_cast<double>(objective().item());
      leaf.mutable_value()[i] = saved - step;
      const double down = static_cast<double>(objective().item());
      leaf.mutable_value()[i] = saved;
      const double numeric = (up - down) / (2.0 * static_cast<double>(step));
      const double err = relative_error(static_cast<double>(analytic[l][i]), numeric);
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = leaves[l].first + "[" + std::to_string(i) + "] analytic=" +
                       std::to_string(static_cast<double>(analytic[l][i])) +
                       " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

}  // namespace metairnet::testing
