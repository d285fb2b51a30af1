#pragma once

// Non-meta classifiers fit per episode on frozen embeddings: nearest
// neighbour, one-vs-all logistic regression and softmax regression.

#include <Eigen/Dense>

#include "metairnet/meta_train.hpp"

namespace metairnet {

enum class ProbeKind { nearest_neighbor, one_vs_all_logistic, softmax_regression };

inline std::string to_string(ProbeKind kind) {
  switch (kind) {
    case ProbeKind::nearest_neighbor: return "nearest_neighbor";
    case ProbeKind::one_vs_all_logistic: return "one_vs_all_logistic";
    case ProbeKind::softmax_regression: return "softmax_regression";
  }
  return "unknown";
}

struct ProbeConfig {
  std::size_t iterations = 100;
  double learning_rate = 0.1;
  double l2 = 1e-3;
};

using FeatureMatrix = Eigen::MatrixXd;

namespace probe_detail {

/// Standardises both sets with the support statistics and appends a bias column.
inline std::pair<FeatureMatrix, FeatureMatrix> prepare(const FeatureMatrix& support, const FeatureMatrix& query) {
  const Eigen::RowVectorXd mean = support.colwise().mean();
  Eigen::RowVectorXd sd = ((support.rowwise() - mean).array().square().colwise().mean()).sqrt();
  const double fallback = sd.maxCoeff() > 0 ? sd.maxCoeff() : 1.0;
  for (Eigen::Index j = 0; j < sd.size(); ++j) {
    if (sd[j] < 1e-8) sd[j] = fallback;
  }
  auto norm = [&](const FeatureMatrix& x) {
    FeatureMatrix out(x.rows(), x.cols() + 1);
    out.leftCols(x.cols()) = (x.rowwise() - mean).array().rowwise() / sd.array();
    out.col(x.cols()).setOnes();
    return out;
  };
  return {norm(support), norm(query)};
}

}  // namespace probe_detail

/// Scores (Q, n); the predicted class is the argmax of each row.
inline FeatureMatrix probe_scores(ProbeKind kind, const FeatureMatrix& support, const std::vector<std::size_t>& labels,
                                  const FeatureMatrix& query, std::size_t n, const ProbeConfig& config = {}) {
  const Eigen::Index s = support.rows();
  if (static_cast<std::size_t>(s) != labels.size()) throw std::invalid_argument("probe: one label per support row");
  FeatureMatrix scores(query.rows(), static_cast<Eigen::Index>(n));
  if (kind == ProbeKind::nearest_neighbor) {
    scores.setConstant(-std::numeric_limits<double>::infinity());
    for (Eigen::Index i = 0; i < query.rows(); ++i)
      for (Eigen::Index j = 0; j < s; ++j) {
        const double d = -(query.row(i) - support.row(j)).norm();
        auto& cell = scores(i, static_cast<Eigen::Index>(labels[j]));
        cell = std::max(cell, d);
      }
    return scores;
  }
  const auto [xs, xq] = probe_detail::prepare(support, query);
  FeatureMatrix targets = FeatureMatrix::Zero(s, static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < s; ++j) targets(j, static_cast<Eigen::Index>(labels[j])) = 1;
  FeatureMatrix w = FeatureMatrix::Zero(xs.cols(), static_cast<Eigen::Index>(n));
  for (std::size_t it = 0; it < config.iterations; ++it) {
    FeatureMatrix logits = xs * w;
    FeatureMatrix prob(logits.rows(), logits.cols());
    if (kind == ProbeKind::one_vs_all_logistic) {
      prob = (1.0 + (-logits).array().exp()).inverse();
    } else {
      for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        Eigen::RowVectorXd e = (logits.row(r).array() - mx).exp();
        prob.row(r) = e / e.sum();
      }
    }
    const FeatureMatrix grad = xs.transpose() * (prob - targets) / static_cast<double>(s) + config.l2 * w;
    w -= config.learning_rate * grad;
  }
  return xq * w;
}

struct ProbeReport {
  ProbeKind kind;
  EvalReport report;
};

/// Runs every probe on the same episodes drawn from `pool` with frozen
/// classifier embeddings.
inline std::vector<ProbeReport> evaluate_frozen_probes(const Encoder<float>& encoder, const Dataset& dataset,
                                                       const std::set<ClassId>& pool, std::size_t n, std::size_t m,
                                                       std::size_t q, std::size_t episodes, std::uint64_t seed,
                                                       const ProbeConfig& config = {}) {
  if (episodes == 0) throw ConfigError("probe evaluation needs at least one episode");
  const std::vector<ClassId> pool_list(pool.begin(), pool.end());
  const auto indices = dataset.indices_in(pool);
  std::vector<std::size_t> row_of(dataset.size(), 0);
  std::vector<const Image*> ptrs;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    row_of[indices[r]] = r;
    ptrs.push_back(&dataset[indices[r]].image);
  }
  const Tensor<float> cached = embed_batch(encoder, ptrs);
  const Eigen::Index d = static_cast<Eigen::Index>(encoder.feature_dim());
  auto gather = [&](const std::vector<EpisodeItem>& items) {
    FeatureMatrix out(static_cast<Eigen::Index>(items.size()), d);
    for (std::size_t i = 0; i < items.size(); ++i)
      for (Eigen::Index k = 0; k < d; ++k) {
        out(static_cast<Eigen::Index>(i), k) = cached[row_of[items[i].index] * static_cast<std::size_t>(d) + k];
      }
    return out;
  };
  const std::vector<ProbeKind> kinds{ProbeKind::nearest_neighbor, ProbeKind::one_vs_all_logistic,
                                     ProbeKind::softmax_regression};
  std::vector<std::vector<double>> acc(kinds.size(), std::vector<double>(episodes));
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng rng = make_rng(seed, streams::kEpisode, e);
    const Episode ep = sample_episode(dataset, pool_list, n, m, q, rng);
    const auto support = gather(ep.support), query = gather(ep.query);
    const auto labels = ep.query_labels();
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      const auto scores = probe_scores(kinds[k], support, ep.support_labels(), query, n, config);
      std::size_t hits = 0;
      for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index best = 0;
        scores.row(i).maxCoeff(&best);
        hits += static_cast<std::size_t>(best) == labels[static_cast<std::size_t>(i)];
      }
      acc[k][e] = 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
    }
  }
  std::vector<ProbeReport> out;
  for (std::size_t k = 0; k < kinds.size(); ++k) out.push_back({kinds[k], make_report(std::move(acc[k]))});
  return out;
}

}  // namespace metairnet
