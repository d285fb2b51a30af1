#pragma once

// The pipeline stages behind each CLI command, callable in-process.

#include <filesystem>
#include <fstream>
#include <iterator>

#include <spdlog/spdlog.h>

#include "metairnet/cache.hpp"
#include "metairnet/checkpoint.hpp"
#include "metairnet/config.hpp"
#include "metairnet/diversity.hpp"
#include "metairnet/ledger.hpp"
#include "metairnet/probes.hpp"

namespace metairnet {

struct Session {
  ExperimentConfig config;
  std::string hash;
  Dataset dataset;
  ClassSplit split;
};

/// Applies environment overrides, validates, loads the dataset and builds the split.
inline Session open_session(ExperimentConfig config) {
  apply_environment(config);
  finalize_config(config);
  Session s;
  s.hash = config_hash(config);
  s.dataset = load_dataset(config.dataset);
  if (s.dataset.size() == 0) throw DataError("dataset is empty");
  s.split = build_class_splits(s.dataset.classes(), config.split);
  s.config = std::move(config);
  spdlog::info("config {}: {} images, {} base / {} val / {} novel classes", s.hash, s.dataset.size(),
               s.split.base.size(), s.split.val.size(), s.split.novel.size());
  return s;
}

inline std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

inline RandomConvExtractor<float> perceptual_extractor(const ExperimentConfig& c) {
  return RandomConvExtractor<float>(c.perceptual_seed, c.perceptual_widths);
}

// ------------------------------------------------------------- generation

/// Writes the configured synthetic dataset as a class-per-directory PNG tree.
inline std::size_t cmd_make_toy_dataset(const ExperimentConfig& c, const std::filesystem::path& out) {
  SyntheticConfig syn = c.dataset.synthetic;
  syn.image_size = c.dataset.image_size;
  const Dataset d = make_synthetic_birds(syn);
  write_dataset(d, out);
  return d.size();
}

/// Scratch generator trained on the base classes only.
inline GeneratorTrainReport cmd_train_toy_generator(const Session& s, const std::filesystem::path& out) {
  const auto& c = s.config;
  GeneratorArch arch = c.generator_arch;
  arch.num_classes = s.split.base.size();
  if (arch.image_size != c.dataset.image_size) throw ConfigError("generator.arch.image_size must match dataset.image_size");
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::map<ClassId, std::size_t> local;
  for (ClassId cls : s.split.base) local.emplace(cls, local.size());
  for (std::size_t idx : s.dataset.indices_in(s.split.base)) {
    images.push_back(s.dataset[idx].image);
    labels.push_back(local.at(s.dataset[idx].label));
  }
  GeneratorTrainReport report;
  const auto extractor = perceptual_extractor(c);
  auto gen = train_generator<float>(images, labels, arch, c.generator_train, extractor, &report);
  save_generator(out, gen, {{"config_hash", s.hash}, {"epoch_loss", report.epoch_loss}});
  return report;
}

inline GeneratedCache open_cache(const Session& s) {
  return GeneratedCache(s.config.cache_dir, s.config.dataset.image_size);
}

/// Fills the generated-image cache for every dataset image.
inline CachePopulateReport cmd_finetune_gan(const Session& s) {
  const auto& c = s.config;
  if (c.generator_checkpoint.empty()) throw ConfigError("generator.checkpoint is not set");
  const auto gen = load_generator(c.generator_checkpoint);
  const std::string key = adapt_hash(c, file_hash(c.generator_checkpoint));
  GeneratedCache cache = open_cache(s);
  std::vector<std::size_t> all(s.dataset.size());
  std::iota(all.begin(), all.end(), 0);
  const auto extractor = perceptual_extractor(c);
  auto report = populate_cache(s.dataset, all, gen, c.adapt, extractor, cache, key, c.seed);
  spdlog::info("finetune-gan: {} adapted, {} already cached, {} images written", report.generated, report.skipped,
               report.images_written);
  return report;
}

// --------------------------------------------------------------- training

inline TrainResult cmd_meta_train(const Session& s) {
  const auto& c = s.config;
  std::optional<GeneratedCache> cache;
  if (uses_generated(c.train.mode)) cache.emplace(s.config.cache_dir, s.config.dataset.image_size);
  TrainResult r = run_meta_training(c.train, s.dataset, s.split, cache ? &*cache : nullptr);
  const std::size_t best = r.best_epoch - 1;
  save_model(c.checkpoint_path(), r.model,
             {{"config_hash", s.hash},
              {"mode", to_string(c.train.mode)},
              {"best_epoch", r.best_epoch},
              {"val_accuracy", r.val_accuracy},
              {"first_step_fusion_grad_norm", r.first_step_fusion_grad_norm}});
  append_ledger(c.ledger_path(), {"meta-train", s.hash, to_string(c.train.mode), c.train.n, c.train.m, c.train.q,
                                  c.train.val_episodes, r.val_accuracy[best], r.val_ci95[best]});
  spdlog::info("meta-train: best epoch {} val {:.2f} +- {:.2f}, checkpoint {}", r.best_epoch, r.val_accuracy[best],
               r.val_ci95[best], c.checkpoint_path().string());
  return r;
}

// ------------------------------------------------------------- evaluation

inline EvalOptions test_options(const ExperimentConfig& c, AugmentationMode mode) {
  EvalOptions o;
  o.n = c.train.n;
  o.m = c.train.m;
  o.q = c.eval.q;
  o.episodes = c.eval.episodes;
  o.seed = c.seed;
  o.mode = mode;
  o.n_aug = c.train.n_aug;
  o.flip_enabled = c.train.flip_enabled;
  o.squared_distance = c.train.squared_distance;
  o.augmentation = c.train.augmentation;
  return o;
}

inline void check_disjoint_novel(const Session& s) {
  for (ClassId cls : s.split.novel) {
    if (s.split.base.count(cls) || s.split.val.count(cls)) {
      throw DataError("novel class " + std::to_string(cls) + " also appears in training classes");
    }
  }
}

struct EvaluateOptions {
  std::optional<AugmentationMode> mode;  // defaults to train.mode
  std::optional<std::filesystem::path> weight_dump;
};

inline EvalReport cmd_evaluate(const Session& s, const std::filesystem::path& checkpoint,
                               const EvaluateOptions& extra = {}) {
  const auto& c = s.config;
  check_disjoint_novel(s);
  MetaModel model = load_model(checkpoint, c.train);
  EvalOptions opt = test_options(c, extra.mode.value_or(c.train.mode));
  std::optional<GeneratedCache> cache;
  if (uses_generated(opt.mode)) cache.emplace(s.config.cache_dir, s.config.dataset.image_size);
  std::optional<WeightGridDump> dump;
  if (extra.weight_dump) {
    dump.emplace(*extra.weight_dump);
    opt.weight_observer = [&](std::size_t e, const std::string& id, int, const Tensor<float>& w) {
      const auto g = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(w.size()))));
      dump->write(e, id, {g, w.reshaped({g, g})});
    };
  }
  auto report = evaluate_model(model, s.dataset, s.split.novel, opt, cache ? &*cache : nullptr);
  append_ledger(c.ledger_path(), {"evaluate", s.hash, to_string(opt.mode) + (opt.flip_enabled ? "+flip" : ""), opt.n,
                                  opt.m, opt.q, report.episode_count, report.mean_accuracy, report.ci95});
  spdlog::info("evaluate {}: {:.2f} +- {:.2f} over {} episodes", to_string(opt.mode), report.mean_accuracy,
               report.ci95, report.episode_count);
  return report;
}

inline std::vector<ProbeReport> cmd_evaluate_probes(const Session& s, const std::filesystem::path& checkpoint) {
  const auto& c = s.config;
  check_disjoint_novel(s);
  MetaModel model = load_model(checkpoint, c.train);
  auto reports = evaluate_frozen_probes(*model.classifier, s.dataset, s.split.novel, c.train.n, c.train.m, c.eval.q,
                                        c.eval.probe_episodes, c.seed);
  for (const auto& r : reports) {
    append_ledger(c.ledger_path(), {"probe", s.hash, to_string(r.kind), c.train.n, c.train.m, c.eval.q,
                                    r.report.episode_count, r.report.mean_accuracy, r.report.ci95});
    spdlog::info("probe {}: {:.2f} +- {:.2f}", to_string(r.kind), r.report.mean_accuracy, r.report.ci95);
  }
  return reports;
}

inline std::vector<EvalReport> cmd_sweep_naug(const Session& s, const std::filesystem::path& checkpoint) {
  const auto& c = s.config;
  check_disjoint_novel(s);
  MetaModel model = load_model(checkpoint, c.train);
  GeneratedCache cache = open_cache(s);
  const std::size_t most = *std::max_element(c.eval.naug_values.begin(), c.eval.naug_values.end());
  preflight_cache(s.dataset, s.split.novel, &cache, most, "sweep-naug");
  auto reports = run_naug_sweep(model, s.dataset, s.split.novel, test_options(c, AugmentationMode::metairnet),
                                c.eval.naug_values, &cache);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    append_ledger(c.ledger_path(), {"sweep-naug:" + std::to_string(c.eval.naug_values[i]), s.hash, "metairnet",
                                    c.train.n, c.train.m, c.eval.q, reports[i].episode_count,
                                    reports[i].mean_accuracy, reports[i].ci95});
  }
  return reports;
}

// --------------------------------------------------------------- analysis

/// Original images, their first generated variant and the fusion of the two.
/// Without a fusion network the fixed manual pattern is used.
inline std::vector<ImageSet> build_diversity_sets(const Dataset& dataset, const std::vector<std::size_t>& indices,
                                                  const GeneratedLookup& lookup, const FusionNetwork<float>* fusion,
                                                  const AugmentationSpec& spec) {
  ImageSet original{"original", {}, {}}, generated{"generated", {}, {}}, fused{"fused", {}, {}};
  for (std::size_t idx : indices) {
    const auto& item = dataset[idx];
    const auto& variants = lookup.variants(item.id);
    if (variants.empty()) throw DataError("no generated variants for image " + item.id);
    const Image& gen = variants.front();
    Image mix = fusion ? fuse_images(item.image, gen,
                                     expand_weight_grid(predict_weight_grid(*fusion, item.image, gen),
                                                        item.image.dim(1), item.image.dim(2)))
                       : manual_grid_mix(item.image, gen, pattern_grid(spec));
    original.images.push_back(item.image);
    generated.images.push_back(gen);
    fused.images.push_back(std::move(mix));
    for (auto* set : {&original, &generated, &fused}) set->labels.push_back(item.label);
  }
  return {original, generated, fused};
}

/// Loads an image set from a class-per-directory tree; labels follow the subdirectories.
inline ImageSet load_image_set(const std::string& name, const std::filesystem::path& dir, std::size_t size) {
  if (!std::filesystem::is_directory(dir)) throw DataError("image set '" + name + "' not found at " + dir.string());
  auto loaded = load_image_directory(dir, size);
  ImageSet set{name, {}, {}};
  for (auto& item : loaded.images) {
    set.images.push_back(std::move(item.image));
    set.labels.push_back(item.label);
  }
  return set;
}

struct AnalyzeOptions {
  std::vector<std::pair<std::string, std::filesystem::path>> sets;  // explicit sets; empty = derive from cache
  bool labels = true;
  std::optional<std::filesystem::path> checkpoint;           // fusion network (and default embedder)
  std::optional<std::filesystem::path> embedder_checkpoint;  // classifier used for embedding instead
};

inline DiversityReport cmd_analyze_diversity(const Session& s, const AnalyzeOptions& options) {
  const auto& c = s.config;
  std::optional<MetaModel> model, embed_model;
  if (options.checkpoint) model = load_model(*options.checkpoint, c.train);
  if (options.embedder_checkpoint) embed_model = load_model(*options.embedder_checkpoint, c.train);
  std::vector<ImageSet> sets;
  if (!options.sets.empty()) {
    for (const auto& [name, path] : options.sets) sets.push_back(load_image_set(name, path, c.dataset.image_size));
  } else {
    GeneratedCache cache = open_cache(s);
    auto indices = s.dataset.indices_in(s.split.novel);
    if (indices.size() > c.analysis.images_per_set) indices.resize(c.analysis.images_per_set);
    sets = build_diversity_sets(s.dataset, indices, cache, model && model->fusion ? model->fusion.get() : nullptr,
                                c.train.augmentation);
  }
  if (!options.labels) {
    for (auto& set : sets) set.labels.clear();
  }
  std::unique_ptr<Encoder<float>> random_embedder;
  const Encoder<float>* embedder = nullptr;
  if (embed_model) {
    embedder = embed_model->classifier.get();
  } else if (c.analysis.embedder == "classifier" && model) {
    embedder = model->classifier.get();
  } else {
    if (c.analysis.embedder == "classifier") spdlog::warn("no checkpoint given; embedding with a random encoder");
    Rng rng = make_rng(c.seed, streams::kInit, 0xd1fe);
    random_embedder = std::make_unique<ConvEncoder<float>>(c.train.classifier, rng);
    embedder = random_embedder.get();
  }
  const auto out = std::filesystem::path(c.output_dir) / "diversity";
  auto report = compare_sets(sets, *embedder, c.analysis.top_k, out);
  for (const auto& a : report.sets) {
    spdlog::info("{}: mean {:.4f} std {:.4f} over {} pairs", a.name, a.stats.mean, a.stats.stddev, a.stats.pair_count);
  }
  return report;
}

}  // namespace metairnet
