#pragma once

// Pairwise-distance distributions, intra/inter-class splits and PCA
// eigenvalue spectra over embedded image sets.

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <optional>

#include <spdlog/spdlog.h>

#include "metairnet/plot.hpp"
#include "metairnet/protonet.hpp"

namespace metairnet {

/// Rows are items, columns are feature dimensions.
using Features = Eigen::MatrixXd;

inline constexpr std::size_t kHistogramBins = 50;

struct DistanceStats {
  double mean = 0;
  double stddev = 0;  // population
  std::size_t pair_count = 0;
  std::vector<double> bin_edges;  // kHistogramBins + 1
  std::vector<std::size_t> counts;
  double max_distance = 0;
};

struct EigenSpectrum {
  std::vector<double> eigenvalues;  // descending, non-negative
};

namespace diversity_detail {

inline double distance(const Features& f, Eigen::Index i, Eigen::Index j) {
  double ss = 0;
  for (Eigen::Index k = 0; k < f.cols(); ++k) {
    const double d = f(i, k) - f(j, k);
    ss += d * d;
  }
  return std::sqrt(ss);
}

/// Mean, population std and histogram of a list of distances. `range` fixes
/// the histogram upper edge; otherwise the largest distance is used.
inline DistanceStats summarize(const std::vector<double>& d, std::optional<double> range) {
  DistanceStats s;
  s.pair_count = d.size();
  double sum = 0;
  for (double v : d) {
    sum += v;
    s.max_distance = std::max(s.max_distance, v);
  }
  s.mean = sum / static_cast<double>(d.size());
  double ss = 0;
  for (double v : d) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(d.size()));
  double top = range.value_or(s.max_distance);
  if (!(top > 0)) top = 1;
  const double width = top / static_cast<double>(kHistogramBins);
  for (std::size_t b = 0; b <= kHistogramBins; ++b) s.bin_edges.push_back(width * static_cast<double>(b));
  s.counts.assign(kHistogramBins, 0);
  for (double v : d) {
    auto b = static_cast<std::size_t>(v / width);
    s.counts[std::min(b, kHistogramBins - 1)] += 1;
  }
  return s;
}

}  // namespace diversity_detail

/// Exact Euclidean distances over all N(N-1)/2 pairs.
inline DistanceStats pairwise_distance_stats(const Features& features, std::optional<double> range = std::nullopt) {
  if (features.rows() < 2) throw std::invalid_argument("pairwise_distance_stats needs at least two vectors");
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(features.rows() * (features.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    for (Eigen::Index j = i + 1; j < features.rows(); ++j) d.push_back(diversity_detail::distance(features, i, j));
  return diversity_detail::summarize(d, range);
}

struct ClassConditionalStats {
  DistanceStats intra;
  DistanceStats inter;
};

/// Same-label pairs versus different-label pairs.
inline ClassConditionalStats class_conditional_distance_stats(const Features& features, const std::vector<int>& labels,
                                                              std::optional<double> range = std::nullopt) {
  if (labels.size() != static_cast<std::size_t>(features.rows())) {
    throw std::invalid_argument("class_conditional_distance_stats: one label per row");
  }
  std::vector<double> intra, inter;
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    for (Eigen::Index j = i + 1; j < features.rows(); ++j) {
      const double d = diversity_detail::distance(features, i, j);
      (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)] ? intra : inter).push_back(d);
    }
  if (intra.empty()) throw std::invalid_argument("intra-class split is empty: no class has two members");
  if (inter.empty()) throw std::invalid_argument("inter-class split is empty: all items share one class");
  return {diversity_detail::summarize(intra, range), diversity_detail::summarize(inter, range)};
}

/// Top-k eigenvalues of the (N-1)-normalised covariance. Uses the N x N Gram
/// matrix when the dimension exceeds the item count.
inline EigenSpectrum pca_eigenspectrum(const Features& features, std::size_t k) {
  if (features.rows() < 2) throw std::invalid_argument("pca_eigenspectrum needs at least two vectors");
  const auto d = static_cast<std::size_t>(features.cols());
  if (k > d) {
    spdlog::warn("pca_eigenspectrum: k={} exceeds dimension {}, truncating", k, d);
    k = d;
  }
  const Features centered = features.rowwise() - features.colwise().mean();
  const double scale = 1.0 / static_cast<double>(features.rows() - 1);
  const Eigen::MatrixXd m = features.cols() <= features.rows() ? Eigen::MatrixXd(centered.transpose() * centered * scale)
                                                               : Eigen::MatrixXd(centered * centered.transpose() * scale);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
  std::vector<double> ev(solver.eigenvalues().data(), solver.eigenvalues().data() + solver.eigenvalues().size());
  std::sort(ev.begin(), ev.end(), std::greater<>());
  for (double& v : ev) v = std::max(v, 0.0);
  ev.resize(k, 0.0);
  return {ev};
}

inline Features to_features(const Tensor<float>& rows) {
  Features f(static_cast<Eigen::Index>(rows.dim(0)), static_cast<Eigen::Index>(rows.size() / rows.dim(0)));
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    for (Eigen::Index j = 0; j < f.cols(); ++j) f(i, j) = rows[static_cast<std::size_t>(i * f.cols() + j)];
  return f;
}

// ------------------------------------------------------------- comparison

struct ImageSet {
  std::string name;
  std::vector<Image> images;
  std::vector<int> labels;  // optional; empty when unlabelled
};

struct SetAnalysis {
  std::string name;
  DistanceStats stats;
  std::optional<ClassConditionalStats> by_class;
  EigenSpectrum spectrum;
};

struct DiversityReport {
  std::vector<SetAnalysis> sets;
  std::vector<std::filesystem::path> artifacts;
};

/// Embeds each set with `embedder` and analyses it. Histograms share one
/// range so the sets are comparable. When `out_dir` is given, writes one
/// histogram per set (plus intra/inter per labelled set), an eigenvalue plot
/// and summary.tsv.
inline DiversityReport compare_sets(const std::vector<ImageSet>& sets, const Encoder<float>& embedder,
                                    std::size_t top_k = 20,
                                    const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  std::vector<Features> feats;
  double range = 0;
  for (const auto& set : sets) {
    if (set.images.size() < 2) throw DataError("image set '" + set.name + "' needs at least two images");
    std::vector<const Image*> ptrs;
    for (const auto& img : set.images) ptrs.push_back(&img);
    feats.push_back(to_features(embed_batch(embedder, ptrs)));
    range = std::max(range, pairwise_distance_stats(feats.back()).max_distance);
  }
  DiversityReport report;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    SetAnalysis a;
    a.name = sets[s].name;
    a.stats = pairwise_distance_stats(feats[s], range);
    if (!sets[s].labels.empty()) a.by_class = class_conditional_distance_stats(feats[s], sets[s].labels, range);
    a.spectrum = pca_eigenspectrum(feats[s], std::min<std::size_t>(top_k, static_cast<std::size_t>(feats[s].cols())));
    report.sets.push_back(std::move(a));
  }
  if (!out_dir) return report;

  std::filesystem::create_directories(*out_dir);
  const std::vector<plot::Color> colors{plot::kBlue, plot::kOrange, plot::kGreen};
  std::vector<std::vector<double>> spectra;
  std::ofstream table(*out_dir / "summary.tsv");
  table << "set\tsplit\tpairs\tmean\tstddev\n";
  for (std::size_t s = 0; s < report.sets.size(); ++s) {
    const auto& a = report.sets[s];
    const auto color = colors[s % colors.size()];
    auto emit = [&](const std::string& split, const DistanceStats& st) {
      const auto path = *out_dir / (a.name + (split == "all" ? "" : "_" + split) + "_hist.png");
      plot::histogram_png(path, st.counts, color);
      report.artifacts.push_back(path);
      table << a.name << '\t' << split << '\t' << st.pair_count << '\t' << st.mean << '\t' << st.stddev << '\n';
    };
    emit("all", a.stats);
    if (a.by_class) {
      emit("intra", a.by_class->intra);
      emit("inter", a.by_class->inter);
    }
    spectra.push_back(a.spectrum.eigenvalues);
  }
  const auto spectrum_path = *out_dir / "eigenspectrum.png";
  plot::series_png(spectrum_path, spectra, colors);
  report.artifacts.push_back(spectrum_path);
  report.artifacts.push_back(*out_dir / "summary.tsv");
  return report;
}

}  // namespace metairnet
