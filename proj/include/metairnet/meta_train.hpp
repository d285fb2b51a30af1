#pragma once

// Episodic training of the classifier (and, for fusion modes, the fusion
// network) with validation-based model selection, plus the evaluation loop
// shared by every augmentation mode.

#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "metairnet/augment.hpp"
#include "metairnet/data.hpp"
#include "metairnet/fusion.hpp"
#include "metairnet/optim.hpp"
#include "metairnet/protonet.hpp"

namespace metairnet {

struct TrainConfig {
  std::size_t n = 5, m = 1, q = 16;
  std::size_t episodes_per_epoch = 100;
  std::size_t epochs = 20;
  double learning_rate = 0.001;
  std::size_t n_aug = 1;
  AugmentationMode mode = AugmentationMode::none;
  bool flip_enabled = false;
  std::uint64_t seed = 0;
  std::size_t val_episodes = 100;
  bool squared_distance = false;
  ConvEncoderConfig classifier{4, 64, 64};
  FusionConfig fusion{3, {4, 64, 64}};
  AugmentationSpec augmentation;

  void validate() const {
    if (n < 2 || m == 0 || q == 0) throw ConfigError("episode shape needs n >= 2, m >= 1, q >= 1");
    if (episodes_per_epoch == 0 || epochs == 0) throw ConfigError("epochs and episodes_per_epoch must be positive");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (val_episodes == 0) throw ConfigError("val_episodes must be positive");
    if (uses_fusion(mode) && fusion.encoder.image_size != classifier.image_size) {
      throw ConfigError("fusion and classifier encoders must share the image size");
    }
    augmentation.validate();
  }
};

/// Classifier plus (for fusion modes) the fusion network.
struct MetaModel {
  std::unique_ptr<Encoder<float>> classifier;
  std::unique_ptr<FusionNetwork<float>> fusion;

  MetaModel() = default;
  MetaModel(MetaModel&&) = default;
  MetaModel& operator=(MetaModel&&) = default;

  MetaModel clone() const {
    MetaModel out;
    out.classifier = classifier->clone();
    if (fusion) out.fusion = std::make_unique<FusionNetwork<float>>(*fusion);
    return out;
  }

  ParamList<float> params() const {
    ParamList<float> out;
    classifier->collect(out, "classifier");
    if (fusion) fusion->collect(out, "fusion");
    return out;
  }
  BufferList<float> buffers() {
    BufferList<float> out;
    classifier->collect_buffers(out, "classifier");
    if (fusion) fusion->collect_buffers(out, "fusion");
    return out;
  }
};

/// The classifier is initialised first, so every mode shares it for a given seed.
inline MetaModel make_model(const TrainConfig& config) {
  Rng rng = make_rng(config.seed, streams::kInit, 0);
  MetaModel model;
  model.classifier = std::make_unique<ConvEncoder<float>>(config.classifier, rng);
  if (uses_fusion(config.mode)) model.fusion = std::make_unique<FusionNetwork<float>>(config.fusion, rng);
  return model;
}

// ----------------------------------------------------------------- reports

struct EvalReport {
  double mean_accuracy = 0;  // percent
  double ci95 = 0;           // percent half-width
  std::size_t episode_count = 0;
  std::vector<double> per_episode;  // percent
};

/// Mean and normal-approximation 95% half-width with the sample standard deviation.
inline std::pair<double, double> confidence_interval(const std::vector<double>& values) {
  if (values.size() < 2) throw std::invalid_argument("confidence_interval needs at least two values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, 1.96 * std::sqrt(ss / (n - 1)) / std::sqrt(n)};
}

inline EvalReport make_report(std::vector<double> per_episode) {
  EvalReport r;
  r.episode_count = per_episode.size();
  if (per_episode.size() >= 2) {
    std::tie(r.mean_accuracy, r.ci95) = confidence_interval(per_episode);
  } else if (per_episode.size() == 1) {
    r.mean_accuracy = per_episode[0];
  }
  r.per_episode = std::move(per_episode);
  return r;
}

/// Index of the largest value; ties go to the earliest.
inline std::size_t select_best_epoch(const std::vector<double>& val_accuracy) {
  if (val_accuracy.empty()) throw std::invalid_argument("select_best_epoch: no epochs");
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_accuracy.size(); ++i) {
    if (val_accuracy[i] > val_accuracy[best]) best = i;
  }
  return best;
}

// ------------------------------------------------------------- generated

/// Jittered variants for every image of the given classes.
inline std::unique_ptr<JitterLookup> make_jitter_lookup(const Dataset& dataset, const std::set<ClassId>& classes,
                                                        const AugmentationSpec& spec, std::uint64_t seed) {
  auto lookup = std::make_unique<JitterLookup>(spec.jitter_magnitude, spec.jitter_variants, seed);
  for (std::size_t idx : dataset.indices_in(classes)) lookup->add(dataset[idx].id, dataset[idx].image);
  return lookup;
}

/// Fails before any work when some image lacks enough cached variants.
inline void preflight_cache(const Dataset& dataset, const std::set<ClassId>& classes,
                            const GeneratedLookup* lookup, std::size_t needed, const std::string& what) {
  if (needed == 0) return;
  if (!lookup) throw DataError(what + " requires generated images but no cache was supplied");
  std::size_t missing = 0;
  std::string first;
  for (std::size_t idx : dataset.indices_in(classes)) {
    const auto& item = dataset[idx];
    std::size_t have = 0;
    try {
      have = lookup->variants(item.id).size();
    } catch (const DataError&) {
      have = 0;
    }
    if (have < needed) {
      if (missing++ == 0) first = item.source.empty() ? item.id : item.source + " (" + item.id + ")";
    }
  }
  if (missing > 0) {
    throw DataError(what + ": " + std::to_string(missing) + " image(s) lack " + std::to_string(needed) +
                    " cached variant(s), first: " + first);
  }
}

// ---------------------------------------------------------------- episodes

struct EpisodeBatch {
  Var<float> images;
  std::vector<std::string> ids;
  std::vector<std::size_t> labels;
};

inline EpisodeBatch episode_images(const Dataset& dataset, const std::vector<EpisodeItem>& items) {
  std::vector<const Image*> ptrs;
  EpisodeBatch out;
  for (const auto& item : items) {
    ptrs.push_back(&dataset[item.index].image);
    out.ids.push_back(dataset[item.index].id);
    out.labels.push_back(item.label);
  }
  out.images = constant(image_batch<float>(ptrs));
  return out;
}

struct EvalOptions {
  std::size_t n = 5, m = 1, q = 16;
  std::size_t episodes = 1000;
  std::uint64_t seed = 0;
  AugmentationMode mode = AugmentationMode::none;
  std::size_t n_aug = 1;
  bool flip_enabled = false;
  bool squared_distance = false;
  AugmentationSpec augmentation;
  /// Called with (episode, image id, variant, g*g weights) for every
  /// grid-mixed support image.
  std::function<void(std::size_t, const std::string&, int, const Tensor<float>&)> weight_observer;
};

namespace detail {

inline Var<float> constant_weights(std::size_t rows, const std::vector<float>& cell_values) {
  Tensor<float> w({rows, cell_values.size()});
  for (std::size_t r = 0; r < rows; ++r) std::copy(cell_values.begin(), cell_values.end(), w.data() + r * cell_values.size());
  return constant(std::move(w));
}

/// Extra support images (and labels) added by the image-level modes.
inline void append_image_augmentations(const MetaModel& model, const EvalOptions& opt, std::size_t episode,
                                       const EpisodeBatch& support, const GeneratedLookup* lookup, Rng& rng, std::vector<Image>& extra,
                                       std::vector<std::size_t>& extra_labels) {
  const std::size_t count = support.ids.size();
  auto image_at = [&](std::size_t i) { return batch_item(support.images.value(), i); };
  auto partner = [&](std::size_t i) {
    if (count < 2) return i;
    std::size_t j = uniform_index(rng, count - 1);
    return j >= i ? j + 1 : j;
  };
  auto fused = [&](const WeightSource<float>& source, std::size_t grid) {
    auto aug = augment_support_set<float>(support.images, support.ids, support.labels, *lookup, opt.n_aug, grid, rng,
                                          source);
    for (std::size_t i = count; i < aug.labels.size(); ++i) {
      extra.push_back(batch_item(aug.images.value(), i));
      extra_labels.push_back(aug.labels[i]);
      if (opt.weight_observer) {
        opt.weight_observer(episode, support.ids[aug.source[i]], aug.variant[i],
                            batch_item(aug.weights.value(), i - count));
      }
    }
  };
  switch (opt.mode) {
    case AugmentationMode::metairnet:
    case AugmentationMode::jitter: {
      if (!model.fusion) throw ConfigError(to_string(opt.mode) + " evaluation needs a model with a fusion network");
      const auto& net = *model.fusion;
      fused([&](const Var<float>& o, const Var<float>& g) { return net.infer_weights(o, g); }, net.grid_size());
      break;
    }
    case AugmentationMode::finetunegan_raw: {
      // Weight 0 everywhere: the fused image is the generated image itself.
      fused([](const Var<float>& o, const Var<float>&) { return constant_weights(o.dim(0), {0.0f}); }, 1);
      break;
    }
    case AugmentationMode::manual_grid: {
      std::vector<float> cells(opt.augmentation.manual_pattern.begin(), opt.augmentation.manual_pattern.end());
      fused([&](const Var<float>& o, const Var<float>&) { return constant_weights(o.dim(0), cells); },
            opt.augmentation.manual_grid);
      break;
    }
    case AugmentationMode::flip:
      for (std::size_t i = 0; i < count; ++i) {
        extra.push_back(flip_augment(image_at(i)));
        extra_labels.push_back(support.labels[i]);
      }
      break;
    case AugmentationMode::mixup:
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t k = 0; k < opt.n_aug; ++k) {
          const std::size_t j = partner(i);
          extra.push_back(mixup_images(image_at(i), image_at(j), uniform_real(rng, 0.0, 1.0)));
          extra_labels.push_back(support.labels[i]);
        }
      break;
    case AugmentationMode::cutmix:
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t k = 0; k < opt.n_aug; ++k) {
          const std::size_t j = partner(i);
          const auto a = image_at(i);
          const auto region = random_cutmix_region(a.dim(1), a.dim(2), opt.augmentation.cutmix_min_area,
                                                   opt.augmentation.cutmix_max_area, rng);
          extra.push_back(cutmix_images(a, image_at(j), region));
          extra_labels.push_back(support.labels[i]);
        }
      break;
    default:
      break;
  }
  if (opt.flip_enabled && opt.mode != AugmentationMode::flip) {
    for (std::size_t i = 0; i < count; ++i) {
      extra.push_back(flip_augment(image_at(i)));
      extra_labels.push_back(support.labels[i]);
    }
  }
}

/// Extra support embeddings added by the feature-level modes.
inline void append_feature_augmentations(const EvalOptions& opt, const Tensor<float>& support_emb,
                                         const std::vector<std::size_t>& labels, Rng& rng,
                                         std::vector<Tensor<float>>& extra, std::vector<std::size_t>& extra_labels) {
  const std::size_t count = labels.size();
  auto row = [&](std::size_t i) { return batch_item(support_emb, i); };
  if (opt.mode == AugmentationMode::gaussian) {
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t k = 0; k < opt.n_aug; ++k) {
        extra.push_back(gaussian_feature_augment(row(i), opt.augmentation.gaussian_sigma, rng));
        extra_labels.push_back(labels[i]);
      }
  } else if (opt.mode == AugmentationMode::manifold_mixup) {
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t k = 0; k < opt.n_aug; ++k) {
        std::size_t j = i;
        if (count > 1) {
          j = uniform_index(rng, count - 1);
          if (j >= i) ++j;
        }
        extra.push_back(manifold_mixup_embed(row(i), row(j), uniform_real(rng, 0.0, 1.0)));
        extra_labels.push_back(labels[i]);
      }
  }
}

}  // namespace detail

/// Runs `opt.episodes` test episodes over `pool`. Plain images are embedded
/// once up front; augmented images are embedded per episode. Episode k draws
/// its classes and images from stream (seed, episode, k) and its augmentation
/// randomness from (seed, augment, k), so every mode sees the same episodes.
inline EvalReport evaluate_model(const MetaModel& model, const Dataset& dataset, const std::set<ClassId>& pool,
                                 const EvalOptions& opt, const GeneratedLookup* lookup = nullptr) {
  if (opt.episodes == 0) throw ConfigError("evaluation needs at least one episode");
  std::unique_ptr<JitterLookup> jitter;
  if (opt.mode == AugmentationMode::jitter && !lookup) {
    jitter = make_jitter_lookup(dataset, pool, opt.augmentation, opt.seed);
    lookup = jitter.get();
  }
  if (uses_generated(opt.mode)) preflight_cache(dataset, pool, lookup, opt.n_aug, "evaluation");

  const std::vector<ClassId> pool_list(pool.begin(), pool.end());
  const auto indices = dataset.indices_in(pool);
  std::vector<std::size_t> row_of(dataset.size(), 0);
  std::vector<const Image*> ptrs;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    row_of[indices[r]] = r;
    ptrs.push_back(&dataset[indices[r]].image);
  }
  const Tensor<float> cached = embed_batch(*model.classifier, ptrs);
  const std::size_t d = model.classifier->feature_dim();

  std::vector<double> acc(opt.episodes);
  for (std::size_t e = 0; e < opt.episodes; ++e) {
    Rng episode_rng = make_rng(opt.seed, streams::kEpisode, e);
    Rng aug_rng = make_rng(opt.seed, streams::kAugment, e);
    const Episode ep = sample_episode(dataset, pool_list, opt.n, opt.m, opt.q, episode_rng);

    std::vector<Tensor<float>> rows;
    std::vector<std::size_t> labels;
    for (const auto& item : ep.support) {
      rows.push_back(batch_item(cached, row_of[item.index]));
      labels.push_back(item.label);
    }
    if (opt.mode != AugmentationMode::none || opt.flip_enabled) {
      const auto support = episode_images(dataset, ep.support);
      std::vector<Image> extra_images;
      std::vector<std::size_t> extra_labels;
      detail::append_image_augmentations(model, opt, e, support, lookup, aug_rng, extra_images, extra_labels);
      if (!extra_images.empty()) {
        std::vector<const Image*> extra_ptrs;
        for (const auto& img : extra_images) extra_ptrs.push_back(&img);
        const auto emb = embed_batch(*model.classifier, extra_ptrs);
        for (std::size_t i = 0; i < extra_images.size(); ++i) rows.push_back(batch_item(emb, i));
        labels.insert(labels.end(), extra_labels.begin(), extra_labels.end());
      }
      const auto originals = stack(std::vector<Tensor<float>>(rows.begin(), rows.begin() + ep.support.size()));
      std::vector<Tensor<float>> feature_rows;
      std::vector<std::size_t> feature_labels;
      detail::append_feature_augmentations(opt, originals, support.labels, aug_rng, feature_rows, feature_labels);
      rows.insert(rows.end(), feature_rows.begin(), feature_rows.end());
      labels.insert(labels.end(), feature_labels.begin(), feature_labels.end());
    }
    const auto support_emb = constant(stack(rows).reshaped({rows.size(), d}));
    Tensor<float> query({ep.query.size(), d});
    for (std::size_t i = 0; i < ep.query.size(); ++i) {
      std::copy(cached.data() + row_of[ep.query[i].index] * d, cached.data() + (row_of[ep.query[i].index] + 1) * d,
                query.data() + i * d);
    }
    const auto logits = query_logits(compute_prototypes(support_emb, labels, opt.n), constant(std::move(query)),
                                     opt.squared_distance);
    acc[e] = 100.0 * accuracy(logits.value(), ep.query_labels());
  }
  return make_report(std::move(acc));
}

/// One EvalReport per n_aug value, all on the same episodes.
inline std::vector<EvalReport> run_naug_sweep(const MetaModel& model, const Dataset& dataset,
                                              const std::set<ClassId>& pool, EvalOptions opt,
                                              const std::vector<std::size_t>& values, const GeneratedLookup* lookup) {
  std::vector<EvalReport> out;
  for (std::size_t v : values) {
    opt.n_aug = v;
    out.push_back(evaluate_model(model, dataset, pool, opt, lookup));
  }
  return out;
}

// ---------------------------------------------------------------- training

struct TrainResult {
  MetaModel model;           // the best-validation epoch
  std::size_t best_epoch = 0;  // 1-based
  std::vector<double> val_accuracy;
  std::vector<double> val_ci95;
  std::vector<double> epoch_loss;
  double first_step_fusion_grad_norm = 0;
  std::size_t floored_probabilities = 0;
};

inline EvalOptions validation_options(const TrainConfig& config) {
  EvalOptions opt;
  opt.n = config.n;
  opt.m = config.m;
  opt.q = config.q;
  opt.episodes = config.val_episodes;
  opt.seed = derive_seed(config.seed, streams::kValidation);
  opt.mode = config.mode;
  opt.n_aug = config.n_aug;
  opt.flip_enabled = config.flip_enabled;
  opt.squared_distance = config.squared_distance;
  opt.augmentation = config.augmentation;
  return opt;
}

/// Sum of squared gradients over the parameters that received one.
inline double gradient_norm(const ParamList<float>& params) {
  double ss = 0;
  for (const auto& p : params) {
    if (!p.var.has_grad()) continue;
    for (float g : p.var.grad().values()) ss += static_cast<double>(g) * g;
  }
  return std::sqrt(ss);
}

/// One optimisation step on one episode; returns the loss.
inline double train_episode(MetaModel& model, Adam<float>& optimizer, const Dataset& dataset, const Episode& ep,
                            const TrainConfig& config, const GeneratedLookup* lookup, Rng& aug_rng,
                            LossStats* stats = nullptr, double* fusion_grad_norm = nullptr) {
  auto support = episode_images(dataset, ep.support);
  auto query = episode_images(dataset, ep.query);
  Var<float> support_images = support.images;
  std::vector<std::size_t> labels = support.labels;
  if (model.fusion && config.n_aug > 0) {
    auto aug = augment_support_set(support.images, support.ids, support.labels, *lookup, *model.fusion, config.n_aug,
                                   aug_rng, true);
    support_images = aug.images;
    labels = aug.labels;
  }
  const std::size_t s = support_images.dim(0);
  auto emb = model.classifier->forward(ops::concat<float>({support_images, query.images}), true);
  auto protos = compute_prototypes(ops::slice_rows(emb, 0, s), labels, config.n);
  auto logits = query_logits(protos, ops::slice_rows(emb, s, emb.dim(0)), config.squared_distance);
  auto loss = episode_cross_entropy(logits, query.labels, stats);
  if (!std::isfinite(loss.item())) throw NumericalError("non-finite episode loss");
  optimizer.zero_grad();
  backward(loss);
  if (fusion_grad_norm && model.fusion) {
    ParamList<float> fp;
    model.fusion->collect(fp, "fusion");
    *fusion_grad_norm = gradient_norm(fp);
  }
  optimizer.step();
  return loss.item();
}

/// Trains on the base classes and returns the model of the epoch with the
/// best validation accuracy. Only fusion modes (metairnet, jitter) train a
/// fusion network; every other mode trains the plain prototypical classifier
/// and applies its augmentation when evaluated.
inline TrainResult run_meta_training(const TrainConfig& config, const Dataset& dataset, const ClassSplit& split,
                                     const GeneratedLookup* generated = nullptr) {
  config.validate();
  const auto& base = split.base;
  const auto& val = split.val;

  std::unique_ptr<JitterLookup> jitter;
  const GeneratedLookup* lookup = generated;
  if (config.mode == AugmentationMode::jitter) {
    std::set<ClassId> both = base;
    both.insert(val.begin(), val.end());
    jitter = make_jitter_lookup(dataset, both, config.augmentation, config.seed);
    lookup = jitter.get();
  }
  if (uses_fusion(config.mode)) preflight_cache(dataset, base, lookup, config.n_aug, "meta-training");
  if (uses_generated(config.mode)) preflight_cache(dataset, val, lookup, config.n_aug, "validation");

  TrainResult result;
  MetaModel model = make_model(config);
  Adam<float> optimizer({{[&] {
                            std::vector<Var<float>> vars;
                            for (const auto& p : model.params()) vars.push_back(p.var);
                            return vars;
                          }(),
                          static_cast<float>(config.learning_rate)}});
  const std::vector<ClassId> base_list(base.begin(), base.end());
  const std::uint64_t train_seed = derive_seed(config.seed, streams::kTrain);
  const EvalOptions val_opt = validation_options(config);
  double best = -1;
  LossStats stats;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double total = 0;
    for (std::size_t i = 0; i < config.episodes_per_epoch; ++i) {
      const std::size_t index = epoch * config.episodes_per_epoch + i;
      Rng episode_rng = make_rng(train_seed, streams::kEpisode, index);
      Rng aug_rng = make_rng(train_seed, streams::kAugment, index);
      const Episode ep = sample_episode(dataset, base_list, config.n, config.m, config.q, episode_rng);
      double* norm = index == 0 ? &result.first_step_fusion_grad_norm : nullptr;
      total += train_episode(model, optimizer, dataset, ep, config, lookup, aug_rng, &stats, norm);
    }
    result.epoch_loss.push_back(total / static_cast<double>(config.episodes_per_epoch));
    const auto report = evaluate_model(model, dataset, val, val_opt, lookup);
    result.val_accuracy.push_back(report.mean_accuracy);
    result.val_ci95.push_back(report.ci95);
    spdlog::info("epoch {}/{} mode={} loss={:.4f} val={:.2f}", epoch + 1, config.epochs, to_string(config.mode),
                 result.epoch_loss.back(), report.mean_accuracy);
    if (report.mean_accuracy > best) {
      best = report.mean_accuracy;
      result.model = model.clone();
      result.best_epoch = epoch + 1;
    }
  }
  result.floored_probabilities = stats.floored;
  if (stats.floored > 0) spdlog::warn("probability floor triggered {} time(s) during training", stats.floored);
  return result;
}

}  // namespace metairnet
