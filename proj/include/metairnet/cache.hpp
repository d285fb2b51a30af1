#pragma once

// Content-addressed store of generator variants:
//   <root>/<image-id>/<k>.png  for k in [0, variants)
//   <root>/<image-id>/meta.txt written last; its presence marks a complete entry.

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

#include <spdlog/spdlog.h>

#include "metairnet/data.hpp"
#include "metairnet/finetune.hpp"
#include "metairnet/fusion.hpp"

namespace metairnet {

struct CacheEntryMeta {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::size_t variants = 0;
  std::string source;
  std::vector<double> loss_trace;  // total loss per adaptation step
};

class GeneratedCache final : public GeneratedLookup {
 public:
  explicit GeneratedCache(std::filesystem::path root, std::size_t image_size)
      : root_(std::move(root)), image_size_(image_size) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path entry_dir(const std::string& id) const { return root_ / id; }

  std::optional<CacheEntryMeta> read_meta(const std::string& id) const {
    std::ifstream in(entry_dir(id) / "meta.txt");
    if (!in) return std::nullopt;
    CacheEntryMeta m;
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      if (key == "config_hash") m.config_hash = value;
      else if (key == "seed") m.seed = std::stoull(value);
      else if (key == "variants") m.variants = std::stoul(value);
      else if (key == "source") m.source = value;
      else if (key == "loss_trace") {
        std::stringstream ss(value);
        std::string tok;
        while (std::getline(ss, tok, ',')) m.loss_trace.push_back(std::stod(tok));
      }
    }
    return m;
  }

  /// True when the entry was produced under `config_hash` with at least `variants` images on disk.
  bool complete(const std::string& id, const std::string& config_hash, std::size_t variants) const {
    const auto meta = read_meta(id);
    if (!meta || meta->config_hash != config_hash || meta->variants < variants) return false;
    for (std::size_t k = 0; k < variants; ++k) {
      if (!std::filesystem::exists(entry_dir(id) / (std::to_string(k) + ".png"))) return false;
    }
    return true;
  }

  void store(const std::string& id, const std::vector<Image>& images, const CacheEntryMeta& meta) {
    const auto dir = entry_dir(id);
    std::filesystem::remove(dir / "meta.txt");
    std::filesystem::create_directories(dir);
    for (std::size_t k = 0; k < images.size(); ++k) save_image(dir / (std::to_string(k) + ".png"), images[k]);
    std::ofstream out(dir / "meta.txt.tmp");
    out << "config_hash=" << meta.config_hash << "\nseed=" << meta.seed << "\nvariants=" << images.size()
        << "\nsource=" << meta.source << "\nloss_trace=";
    for (std::size_t i = 0; i < meta.loss_trace.size(); ++i) out << (i ? "," : "") << meta.loss_trace[i];
    out << "\n";
    out.close();
    std::filesystem::rename(dir / "meta.txt.tmp", dir / "meta.txt");
    std::lock_guard lock(mutex_);
    loaded_.erase(id);
  }

  /// Loads (and memoises) the variants of a complete entry.
  const std::vector<Image>& variants(const std::string& id) const override {
    std::lock_guard lock(mutex_);
    auto it = loaded_.find(id);
    if (it != loaded_.end()) return it->second;
    const auto meta = read_meta(id);
    if (!meta) throw DataError("no generated images cached for image " + id + " under " + root_.string());
    std::vector<Image> out;
    for (std::size_t k = 0; k < meta->variants; ++k) {
      out.push_back(load_image(entry_dir(id) / (std::to_string(k) + ".png"), image_size_));
    }
    return loaded_.emplace(id, std::move(out)).first->second;
  }

 private:
  std::filesystem::path root_;
  std::size_t image_size_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::vector<Image>> loaded_;
};

struct CachePopulateReport {
  std::size_t generated = 0;  // entries written this run
  std::size_t skipped = 0;    // entries already complete
  std::size_t images_written = 0;
};

/// Adapts the generator to every image that lacks a complete entry and
/// stores `config.num_variants` perturbed samples. Each image's randomness
/// is keyed by its content id, so results do not depend on processing order
/// and an interrupted run resumes where it stopped.
inline CachePopulateReport populate_cache(const Dataset& dataset, const std::vector<std::size_t>& indices,
                                          const PretrainedGenerator<float>& generator, const AdaptConfig& config,
                                          const FeatureExtractor<float>& extractor, GeneratedCache& cache,
                                          const std::string& config_hash, std::uint64_t seed) {
  config.validate();
  CachePopulateReport report;
  const std::size_t size = generator.arch().image_size;
  for (std::size_t pos = 0; pos < indices.size(); ++pos) {
    const auto& item = dataset[indices[pos]];
    if (cache.complete(item.id, config_hash, config.num_variants)) {
      ++report.skipped;
      continue;
    }
    Rng rng = make_rng(seed, streams::kAdapt, fnv1a(item.id));
    const Image target = item.image.dim(1) == size && item.image.dim(2) == size
                             ? item.image
                             : resize_bilinear(item.image, size, size);
    auto state = adapt_generator_to_image(generator, target, config, rng, extractor);
    auto images = sample_perturbed_images(state, config.perturb_sigma, config.num_variants, rng);
    if (item.image.dim(1) != size || item.image.dim(2) != size) {
      for (auto& img : images) img = resize_bilinear(img, item.image.dim(1), item.image.dim(2));
    }
    CacheEntryMeta meta{config_hash, seed, images.size(), item.source, {}};
    for (const auto& r : state.loss_trace) meta.loss_trace.push_back(r.total);
    cache.store(item.id, images, meta);
    ++report.generated;
    report.images_written += images.size();
    if ((report.generated % 25) == 0) {
      spdlog::info("cache: {} adapted, {} skipped, {}/{} done", report.generated, report.skipped, pos + 1,
                   indices.size());
    }
  }
  return report;
}

}  // namespace metairnet
