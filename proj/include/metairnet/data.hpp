#pragma once

// Datasets, disjoint class splits and n-way-m-shot episode sampling.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "metairnet/errors.hpp"
#include "metairnet/hash.hpp"
#include "metairnet/image.hpp"
#include "metairnet/rng.hpp"

namespace metairnet {

using ClassId = int;

struct LabeledImage {
  Image image;
  ClassId label = 0;
  std::string id;      // content hash of the decoded image
  std::string source;  // file path, or a synthetic descriptor
};

/// Immutable collection of labeled images with a per-class index.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<LabeledImage> items) : items_(std::move(items)) {
    for (std::size_t i = 0; i < items_.size(); ++i) {
      if (items_[i].id.empty()) items_[i].id = tensor_hash(items_[i].image);
      by_class_[items_[i].label].push_back(i);
    }
  }

  std::size_t size() const { return items_.size(); }
  const LabeledImage& operator[](std::size_t i) const { return items_[i]; }
  const std::vector<LabeledImage>& items() const { return items_; }

  std::vector<ClassId> classes() const {
    std::vector<ClassId> out;
    for (const auto& [c, idx] : by_class_) out.push_back(c);
    return out;
  }

  const std::vector<std::size_t>& indices_of(ClassId c) const {
    static const std::vector<std::size_t> kEmpty;
    auto it = by_class_.find(c);
    return it == by_class_.end() ? kEmpty : it->second;
  }

  /// Items whose label is in `classes`, preserving order.
  std::vector<std::size_t> indices_in(const std::set<ClassId>& classes) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < items_.size(); ++i) {
      if (classes.count(items_[i].label)) out.push_back(i);
    }
    return out;
  }

 private:
  std::vector<LabeledImage> items_;
  std::map<ClassId, std::vector<std::size_t>> by_class_;
};

// ------------------------------------------------------------------- splits

struct ClassSplit {
  std::set<ClassId> base;
  std::set<ClassId> val;
  std::set<ClassId> novel;
};

struct ExplicitSplit {
  std::vector<ClassId> base, val, novel;
};

struct RatioSplit {
  double base = 0.5, val = 0.25, novel = 0.25;
  std::uint64_t seed = 0;
};

using SplitSpec = std::variant<ExplicitSplit, RatioSplit>;

namespace detail {

inline void check_split(const ClassSplit& split, const std::vector<ClassId>& all_classes) {
  auto overlap = [](const std::set<ClassId>& a, const std::set<ClassId>& b, const char* an, const char* bn) {
    for (ClassId c : a) {
      if (b.count(c)) {
        throw ConfigError("class " + std::to_string(c) + " appears in both " + an + " and " + bn + " splits");
      }
    }
  };
  overlap(split.base, split.val, "base", "val");
  overlap(split.base, split.novel, "base", "novel");
  overlap(split.val, split.novel, "val", "novel");
  if (split.base.empty()) throw ConfigError("base split has zero classes");
  if (split.val.empty()) throw ConfigError("val split has zero classes");
  if (split.novel.empty()) throw ConfigError("novel split has zero classes");
  std::set<ClassId> all(all_classes.begin(), all_classes.end());
  std::set<ClassId> covered;
  covered.insert(split.base.begin(), split.base.end());
  covered.insert(split.val.begin(), split.val.end());
  covered.insert(split.novel.begin(), split.novel.end());
  if (covered != all) {
    for (ClassId c : covered) {
      if (!all.count(c)) throw ConfigError("split lists class " + std::to_string(c) + " which the dataset lacks");
    }
    for (ClassId c : all) {
      if (!covered.count(c)) throw ConfigError("dataset class " + std::to_string(c) + " is not assigned to any split");
    }
  }
}

}  // namespace detail

/// Builds a disjoint base/val/novel split. Ratio splits shuffle the sorted
/// class list with the given seed and allocate floor(N * ratio) classes to
/// val and novel; the remainder goes to base.
inline ClassSplit build_class_splits(const std::vector<ClassId>& dataset_classes, const SplitSpec& spec) {
  ClassSplit split;
  if (const auto* ex = std::get_if<ExplicitSplit>(&spec)) {
    auto fill = [](std::set<ClassId>& dst, const std::vector<ClassId>& src, const char* name) {
      for (ClassId c : src) {
        if (!dst.insert(c).second) {
          throw ConfigError("class " + std::to_string(c) + " listed twice in " + name + " split");
        }
      }
    };
    fill(split.base, ex->base, "base");
    fill(split.val, ex->val, "val");
    fill(split.novel, ex->novel, "novel");
  } else {
    const auto& r = std::get<RatioSplit>(spec);
    if (r.base < 0 || r.val < 0 || r.novel < 0 || std::abs(r.base + r.val + r.novel - 1.0) > 1e-6) {
      throw ConfigError("split ratios must be non-negative and sum to 1");
    }
    std::vector<ClassId> classes(dataset_classes);
    std::sort(classes.begin(), classes.end());
    Rng rng(r.seed);
    for (std::size_t i = 0; i + 1 < classes.size(); ++i) {
      std::swap(classes[i], classes[i + uniform_index(rng, classes.size() - i)]);
    }
    const auto total = static_cast<double>(classes.size());
    const auto n_val = static_cast<std::size_t>(std::floor(total * r.val + 1e-9));
    const auto n_novel = static_cast<std::size_t>(std::floor(total * r.novel + 1e-9));
    const std::size_t n_base = classes.size() - n_val - n_novel;
    split.base.insert(classes.begin(), classes.begin() + n_base);
    split.val.insert(classes.begin() + n_base, classes.begin() + n_base + n_val);
    split.novel.insert(classes.begin() + n_base + n_val, classes.end());
  }
  detail::check_split(split, dataset_classes);
  return split;
}

// ----------------------------------------------------------------- episodes

struct EpisodeItem {
  std::size_t index;  // position in the dataset
  std::size_t label;  // episode-local class in [0, n)
};

struct Episode {
  std::size_t n = 0, m = 0, q = 0;
  std::vector<EpisodeItem> support;  // class-major: m items per class
  std::vector<EpisodeItem> query;    // class-major: q items per class
  std::vector<ClassId> classes;      // local index -> original class id
  std::map<ClassId, std::size_t> label_map;

  std::vector<std::size_t> support_labels() const {
    std::vector<std::size_t> out;
    for (const auto& s : support) out.push_back(s.label);
    return out;
  }
  std::vector<std::size_t> query_labels() const {
    std::vector<std::size_t> out;
    for (const auto& s : query) out.push_back(s.label);
    return out;
  }
};

/// Samples an n-way episode with m support and q query images per class.
///
/// Draw order (replayable): a partial Fisher-Yates pass over the ascending
/// class pool picks n classes, one `uniform_index` draw per class; then, for
/// each picked class in order, a partial Fisher-Yates pass over that class's
/// dataset indices picks m + q images, the first m becoming support.
/// Episode-local labels follow class pick order.
inline Episode sample_episode(const Dataset& dataset, std::vector<ClassId> class_pool, std::size_t n,
                              std::size_t m, std::size_t q, Rng& rng) {
  if (n == 0 || m == 0 || q == 0) throw ConfigError("episode shape n, m, q must be positive");
  std::sort(class_pool.begin(), class_pool.end());
  class_pool.erase(std::unique(class_pool.begin(), class_pool.end()), class_pool.end());
  if (class_pool.size() < n) {
    throw DataError("cannot sample a " + std::to_string(n) + "-way episode from a pool of " +
                    std::to_string(class_pool.size()) + " classes");
  }
  for (ClassId c : class_pool) {
    const auto count = dataset.indices_of(c).size();
    if (count < m + q) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(count) +
                      " images but an episode needs " + std::to_string(m + q));
    }
  }
  Episode ep;
  ep.n = n;
  ep.m = m;
  ep.q = q;
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(class_pool[i], class_pool[i + uniform_index(rng, class_pool.size() - i)]);
  }
  ep.classes.assign(class_pool.begin(), class_pool.begin() + n);
  for (std::size_t local = 0; local < n; ++local) {
    ep.label_map[ep.classes[local]] = local;
    std::vector<std::size_t> pool = dataset.indices_of(ep.classes[local]);
    for (std::size_t i = 0; i < m + q; ++i) {
      std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    }
    for (std::size_t i = 0; i < m; ++i) ep.support.push_back({pool[i], local});
    for (std::size_t i = m; i < m + q; ++i) ep.query.push_back({pool[i], local});
  }
  return ep;
}

// ---------------------------------------------------------------- ingestion

struct IngestionReport {
  std::vector<std::pair<std::string, std::string>> skipped;  // (path, reason)
};

struct LoadedImages {
  std::vector<LabeledImage> images;
  std::vector<std::string> class_names;  // class id -> subdirectory name
  IngestionReport report;
};

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm";
}

inline std::optional<LabeledImage> try_load(const std::filesystem::path& file, ClassId label,
                                            std::size_t size, ValueRange range, IngestionReport& report) {
  try {
    LabeledImage item{load_image(file, size, range), label, {}, file.string()};
    item.id = tensor_hash(item.image);
    return item;
  } catch (const DataError& e) {
    spdlog::warn("skipping {}: {}", file.string(), e.what());
    report.skipped.emplace_back(file.string(), e.what());
    return std::nullopt;
  }
}

}  // namespace detail

/// Loads a class-per-subdirectory tree. Class ids follow sorted subdirectory
/// names; images are resized to target_size x target_size.
inline LoadedImages load_image_directory(const std::filesystem::path& root, std::size_t target_size,
                                         ValueRange range = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw DataError("no class subdirectories under " + root.string());
  LoadedImages out;
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[c])) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("empty class directory: " + class_dirs[c].string());
    out.class_names.push_back(class_dirs[c].filename().string());
    for (const auto& f : files) {
      if (!detail::is_image_file(f)) {
        spdlog::warn("skipping {}: unsupported extension", f.string());
        out.report.skipped.emplace_back(f.string(), "unsupported extension");
        continue;
      }
      if (auto item = detail::try_load(f, static_cast<ClassId>(c), target_size, range, out.report)) {
        out.images.push_back(std::move(*item));
      }
    }
  }
  return out;
}

/// Loads images listed in a `relative_path<TAB>class_id` manifest.
inline LoadedImages load_manifest(const std::filesystem::path& manifest, const std::filesystem::path& root,
                                  std::size_t target_size, ValueRange range = {}) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  LoadedImages out;
  std::string line;
  std::size_t line_no = 0;
  std::set<ClassId> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(manifest.string() + ":" + std::to_string(line_no) + ": expected path<TAB>class_id");
    }
    ClassId label = 0;
    try {
      label = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw DataError(manifest.string() + ":" + std::to_string(line_no) + ": bad class id");
    }
    seen.insert(label);
    if (auto item = detail::try_load(root / line.substr(0, tab), label, target_size, range, out.report)) {
      out.images.push_back(std::move(*item));
    }
  }
  for (ClassId c : seen) out.class_names.push_back(std::to_string(c));
  return out;
}

}  // namespace metairnet
