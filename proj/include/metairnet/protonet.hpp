#pragma once

#include <cmath>
#include <vector>

#include "metairnet/encoder.hpp"
#include "metairnet/image.hpp"

namespace metairnet {

inline constexpr double kProbabilityFloor = 1e-12;

/// Stacks images into one (N, 3, H, W) tensor.
template <typename T>
Tensor<T> image_batch(const std::vector<const Image*>& images) {
  if (images.empty()) throw std::invalid_argument("empty image batch");
  const Shape& s = images.front()->shape();
  Tensor<T> out({images.size(), s[0], s[1], s[2]});
  const std::size_t per = images.front()->size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->shape() != s) {
      throw std::invalid_argument("image batch shape mismatch: " + shape_string(images[i]->shape()) + " vs " +
                                  shape_string(s));
    }
    std::copy(images[i]->values().begin(), images[i]->values().end(), out.data() + i * per);
  }
  return out;
}

/// Inference-mode embeddings, one row per image, computed in chunks.
template <typename T>
Tensor<T> embed_batch(const Encoder<T>& net, const std::vector<const Image*>& images, std::size_t chunk = 64) {
  Tensor<T> out({images.size(), net.feature_dim()});
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t end = std::min(images.size(), start + chunk);
    std::vector<const Image*> part(images.begin() + start, images.begin() + end);
    auto emb = net.infer(constant(image_batch<T>(part)));
    std::copy(emb.value().values().begin(), emb.value().values().end(), out.data() + start * net.feature_dim());
  }
  return out;
}

/// Row c is the mean of the embeddings labelled c; every class needs one.
template <typename T>
Var<T> compute_prototypes(const Var<T>& embeddings, const std::vector<std::size_t>& labels, std::size_t n) {
  return ops::class_means(embeddings, labels, n);
}

/// Negative (optionally squared) Euclidean distances, (Q, n).
template <typename T>
Var<T> query_logits(const Var<T>& prototypes, const Var<T>& queries, bool squared_distance = false) {
  return ops::scale(ops::pairwise_distances(queries, prototypes, squared_distance), T{-1});
}

/// Softmax over negative distances to the prototypes, one row per query.
template <typename T>
Tensor<T> query_class_probabilities(const Var<T>& prototypes, const Var<T>& queries, bool squared_distance = false) {
  return ops::softmax_rows(query_logits(prototypes, queries, squared_distance).value());
}

struct LossStats {
  std::size_t floored = 0;  // queries whose true-class probability hit the floor
};

/// Mean negative log-probability of the true class from logits.
template <typename T>
Var<T> episode_cross_entropy(const Var<T>& logits, const std::vector<std::size_t>& labels,
                             LossStats* stats = nullptr) {
  std::size_t floored = 0;
  auto loss = ops::cross_entropy_logits(logits, labels, static_cast<T>(kProbabilityFloor), &floored);
  if (stats) stats->floored += floored;
  return loss;
}

/// Same loss from an explicit (Q, n) probability matrix.
template <typename T>
T episode_cross_entropy(const Tensor<T>& probabilities, const std::vector<std::size_t>& labels,
                        LossStats* stats = nullptr) {
  const std::size_t nq = probabilities.dim(0), n = probabilities.dim(1);
  if (labels.size() != nq) throw std::invalid_argument("episode_cross_entropy: one label per query");
  T total{0};
  for (std::size_t i = 0; i < nq; ++i) {
    if (labels[i] >= n) throw std::invalid_argument("episode_cross_entropy: label out of range");
    T p = probabilities[i * n + labels[i]];
    if (p < static_cast<T>(kProbabilityFloor)) {
      p = static_cast<T>(kProbabilityFloor);
      if (stats) ++stats->floored;
    }
    total -= std::log(p);
  }
  return total / static_cast<T>(nq);
}

/// Fraction of rows whose argmax equals the label.
template <typename T>
double accuracy(const Tensor<T>& scores, const std::vector<std::size_t>& labels) {
  const std::size_t nq = scores.dim(0), n = scores.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < nq; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (scores[i * n + j] > scores[i * n + best]) best = j;
    }
    hits += best == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(nq);
}

}  // namespace metairnet
