#pragma once

// Experiment configuration: a JSON key tree with strict key checking,
// environment overrides for paths and a content hash of the effective values.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "metairnet/augment.hpp"
#include "metairnet/checkpoint.hpp"
#include "metairnet/data.hpp"
#include "metairnet/finetune.hpp"
#include "metairnet/meta_train.hpp"
#include "metairnet/synthetic.hpp"

namespace metairnet {

using nlohmann::json;

struct DatasetConfig {
  std::string kind = "directory";  // directory | manifest | synthetic
  std::string root;
  std::string manifest;
  std::size_t image_size = 64;
  SyntheticConfig synthetic;
};

struct EvalConfig {
  std::size_t episodes = 1000;
  std::size_t q = 16;
  std::size_t probe_episodes = 2000;
  std::vector<std::size_t> naug_values{1, 2, 3, 4, 5};
};

struct AnalysisConfig {
  std::size_t images_per_set = 100;
  std::size_t top_k = 20;
  std::string embedder = "classifier";  // classifier | random
};

struct ExperimentConfig {
  DatasetConfig dataset;
  SplitSpec split = RatioSplit{};
  AdaptConfig adapt;
  std::string generator_checkpoint;
  std::uint64_t perceptual_seed = 17;
  std::vector<std::size_t> perceptual_widths{16, 32, 32};
  GeneratorArch generator_arch;  // used when training a scratch generator
  GeneratorTrainConfig generator_train;
  TrainConfig train;
  EvalConfig eval;
  AnalysisConfig analysis;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::string cache_dir = "cache";

  std::filesystem::path ledger_path() const { return std::filesystem::path(output_dir) / "ledger.csv"; }
  std::filesystem::path checkpoint_path() const { return std::filesystem::path(output_dir) / "model.ckpt"; }
};

namespace config_detail {

/// Reads keys from one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& target) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      target = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + where(key) + "' has the wrong type: " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  Section child(const char* key) {
    seen_.insert(key);
    return Section(j_.contains(key) ? j_.at(key) : empty(), where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where(k) + "'");
    }
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_encoder(Section s, ConvEncoderConfig& e) {
  s.read("depth", e.depth);
  s.read("width", e.width);
  s.finish();
}

}  // namespace config_detail

inline ExperimentConfig parse_config(const json& root) {
  using config_detail::Section;
  ExperimentConfig c;
  Section top(root, "");
  {
    auto s = top.child("dataset");
    s.read("kind", c.dataset.kind);
    s.read("root", c.dataset.root);
    s.read("manifest", c.dataset.manifest);
    s.read("image_size", c.dataset.image_size);
    auto syn = s.child("synthetic");
    syn.read("classes", c.dataset.synthetic.classes);
    syn.read("per_class", c.dataset.synthetic.per_class);
    syn.read("seed", c.dataset.synthetic.seed);
    syn.read("class_separation", c.dataset.synthetic.class_separation);
    syn.read("intra_class_noise", c.dataset.synthetic.intra_class_noise);
    syn.finish();
    s.finish();
    c.dataset.synthetic.image_size = c.dataset.image_size;
    if (c.dataset.kind != "directory" && c.dataset.kind != "manifest" && c.dataset.kind != "synthetic") {
      throw ConfigError("dataset.kind must be directory, manifest or synthetic");
    }
  }
  {
    auto s = top.child("split");
    if (s.has("classes") && s.has("ratios")) throw ConfigError("split: give either classes or ratios, not both");
    if (s.has("classes")) {
      ExplicitSplit e;
      auto cl = s.child("classes");
      cl.read("base", e.base);
      cl.read("val", e.val);
      cl.read("novel", e.novel);
      cl.finish();
      c.split = e;
    } else {
      RatioSplit r;
      std::vector<double> ratios{r.base, r.val, r.novel};
      s.read("ratios", ratios);
      s.read("seed", r.seed);
      if (ratios.size() != 3) throw ConfigError("split.ratios needs three values (base, val, novel)");
      r.base = ratios[0], r.val = ratios[1], r.novel = ratios[2];
      c.split = r;
    }
    s.finish();
  }
  {
    auto s = top.child("adapt");
    s.read("lambda_p", c.adapt.lambda_p);
    s.read("lambda_z", c.adapt.lambda_z);
    s.read("steps", c.adapt.steps);
    s.read("lr_noise", c.adapt.lr_noise);
    s.read("lr_bn", c.adapt.lr_bn);
    s.read("perturb_sigma", c.adapt.perturb_sigma);
    s.read("num_variants", c.adapt.num_variants);
    s.read("noise_only", c.adapt.noise_only);
    s.finish();
  }
  {
    auto s = top.child("generator");
    s.read("checkpoint", c.generator_checkpoint);
    s.read("perceptual_seed", c.perceptual_seed);
    s.read("perceptual_widths", c.perceptual_widths);
    auto a = s.child("arch");
    a.read("latent_dim", c.generator_arch.latent_dim);
    a.read("embed_dim", c.generator_arch.embed_dim);
    a.read("image_size", c.generator_arch.image_size);
    a.read("channels", c.generator_arch.channels);
    a.read("conditional", c.generator_arch.conditional);
    a.finish();
    auto t = s.child("train");
    t.read("epochs", c.generator_train.epochs);
    t.read("batch_size", c.generator_train.batch_size);
    t.read("lr", c.generator_train.lr);
    t.read("lr_latent", c.generator_train.lr_latent);
    t.read("lambda_p", c.generator_train.lambda_p);
    t.read("lambda_z", c.generator_train.lambda_z);
    t.finish();
    s.finish();
  }
  {
    auto s = top.child("episode");
    s.read("n", c.train.n);
    s.read("m", c.train.m);
    s.read("q", c.train.q);
    s.finish();
  }
  {
    auto s = top.child("train");
    std::string mode = to_string(c.train.mode);
    s.read("mode", mode);
    c.train.mode = parse_augmentation_mode(mode);
    s.read("flip_enabled", c.train.flip_enabled);
    s.read("n_aug", c.train.n_aug);
    s.read("epochs", c.train.epochs);
    s.read("episodes_per_epoch", c.train.episodes_per_epoch);
    s.read("learning_rate", c.train.learning_rate);
    s.read("val_episodes", c.train.val_episodes);
    s.read("squared_distance", c.train.squared_distance);
    s.finish();
  }
  config_detail::read_encoder(top.child("backbone"), c.train.classifier);
  {
    auto s = top.child("fusion");
    s.read("grid", c.train.fusion.grid);
    s.read("depth", c.train.fusion.encoder.depth);
    s.read("width", c.train.fusion.encoder.width);
    s.finish();
  }
  {
    auto s = top.child("augment");
    auto& a = c.train.augmentation;
    s.read("gaussian_sigma", a.gaussian_sigma);
    s.read("cutmix_min_area", a.cutmix_min_area);
    s.read("cutmix_max_area", a.cutmix_max_area);
    s.read("jitter_magnitude", a.jitter_magnitude);
    s.read("jitter_variants", a.jitter_variants);
    s.read("manual_grid", a.manual_grid);
    s.read("manual_pattern", a.manual_pattern);
    s.finish();
  }
  {
    auto s = top.child("eval");
    s.read("episodes", c.eval.episodes);
    s.read("q", c.eval.q);
    s.read("probe_episodes", c.eval.probe_episodes);
    s.read("naug_values", c.eval.naug_values);
    s.finish();
  }
  {
    auto s = top.child("analysis");
    s.read("images_per_set", c.analysis.images_per_set);
    s.read("top_k", c.analysis.top_k);
    s.read("embedder", c.analysis.embedder);
    s.finish();
  }
  top.read("seed", c.seed);
  top.read("output_dir", c.output_dir);
  top.read("cache_dir", c.cache_dir);
  top.finish();
  return c;
}

/// Path overrides from the environment.
inline void apply_environment(ExperimentConfig& c) {
  auto env = [](const char* name, std::string& target) {
    if (const char* v = std::getenv(name); v && *v) target = v;
  };
  env("METAIRNET_DATASET_ROOT", c.dataset.root);
  env("METAIRNET_OUTPUT_DIR", c.output_dir);
  env("METAIRNET_CACHE_DIR", c.cache_dir);
  env("METAIRNET_GENERATOR_CHECKPOINT", c.generator_checkpoint);
}

/// Propagates shared values into the nested configs and validates them.
inline void finalize_config(ExperimentConfig& c) {
  c.train.seed = c.seed;
  c.generator_train.seed = c.seed;
  c.train.classifier.image_size = c.dataset.image_size;
  c.train.fusion.encoder.image_size = c.dataset.image_size;
  c.train.validate();
  c.adapt.validate();
  if (c.eval.episodes == 0 || c.eval.q == 0) throw ConfigError("eval.episodes and eval.q must be positive");
  if (c.dataset.kind != "synthetic" && c.dataset.root.empty()) throw ConfigError("dataset.root is required");
}

inline json to_json(const ExperimentConfig& c) {
  json split;
  if (const auto* e = std::get_if<ExplicitSplit>(&c.split)) {
    split = {{"classes", {{"base", e->base}, {"val", e->val}, {"novel", e->novel}}}};
  } else {
    const auto& r = std::get<RatioSplit>(c.split);
    split = {{"ratios", {r.base, r.val, r.novel}}, {"seed", r.seed}};
  }
  const auto& a = c.train.augmentation;
  return {
      {"dataset",
       {{"kind", c.dataset.kind},
        {"root", c.dataset.root},
        {"manifest", c.dataset.manifest},
        {"image_size", c.dataset.image_size},
        {"synthetic",
         {{"classes", c.dataset.synthetic.classes},
          {"per_class", c.dataset.synthetic.per_class},
          {"seed", c.dataset.synthetic.seed},
          {"class_separation", c.dataset.synthetic.class_separation},
          {"intra_class_noise", c.dataset.synthetic.intra_class_noise}}}}},
      {"split", split},
      {"adapt",
       {{"lambda_p", c.adapt.lambda_p},
        {"lambda_z", c.adapt.lambda_z},
        {"steps", c.adapt.steps},
        {"lr_noise", c.adapt.lr_noise},
        {"lr_bn", c.adapt.lr_bn},
        {"perturb_sigma", c.adapt.perturb_sigma},
        {"num_variants", c.adapt.num_variants},
        {"noise_only", c.adapt.noise_only}}},
      {"generator",
       {{"checkpoint", c.generator_checkpoint},
        {"perceptual_seed", c.perceptual_seed},
        {"perceptual_widths", c.perceptual_widths},
        {"arch",
         {{"latent_dim", c.generator_arch.latent_dim},
          {"embed_dim", c.generator_arch.embed_dim},
          {"image_size", c.generator_arch.image_size},
          {"channels", c.generator_arch.channels},
          {"conditional", c.generator_arch.conditional}}},
        {"train",
         {{"epochs", c.generator_train.epochs},
          {"batch_size", c.generator_train.batch_size},
          {"lr", c.generator_train.lr},
          {"lr_latent", c.generator_train.lr_latent},
          {"lambda_p", c.generator_train.lambda_p},
          {"lambda_z", c.generator_train.lambda_z}}}}},
      {"episode", {{"n", c.train.n}, {"m", c.train.m}, {"q", c.train.q}}},
      {"train",
       {{"mode", to_string(c.train.mode)},
        {"flip_enabled", c.train.flip_enabled},
        {"n_aug", c.train.n_aug},
        {"epochs", c.train.epochs},
        {"episodes_per_epoch", c.train.episodes_per_epoch},
        {"learning_rate", c.train.learning_rate},
        {"val_episodes", c.train.val_episodes},
        {"squared_distance", c.train.squared_distance}}},
      {"backbone", {{"depth", c.train.classifier.depth}, {"width", c.train.classifier.width}}},
      {"fusion",
       {{"grid", c.train.fusion.grid},
        {"depth", c.train.fusion.encoder.depth},
        {"width", c.train.fusion.encoder.width}}},
      {"augment",
       {{"gaussian_sigma", a.gaussian_sigma},
        {"cutmix_min_area", a.cutmix_min_area},
        {"cutmix_max_area", a.cutmix_max_area},
        {"jitter_magnitude", a.jitter_magnitude},
        {"jitter_variants", a.jitter_variants},
        {"manual_grid", a.manual_grid},
        {"manual_pattern", a.manual_pattern}}},
      {"eval",
       {{"episodes", c.eval.episodes},
        {"q", c.eval.q},
        {"probe_episodes", c.eval.probe_episodes},
        {"naug_values", c.eval.naug_values}}},
      {"analysis",
       {{"images_per_set", c.analysis.images_per_set},
        {"top_k", c.analysis.top_k},
        {"embedder", c.analysis.embedder}}},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"cache_dir", c.cache_dir},
  };
}

/// Hash of the canonical serialisation of the effective config.
inline std::string config_hash(const ExperimentConfig& c) { return sha256_hex(to_json(c).dump()); }

/// Hash of the settings that determine generator output; keys the cache.
inline std::string adapt_hash(const ExperimentConfig& c, const std::string& generator_id) {
  const json j = to_json(c);
  json sub = {{"adapt", j["adapt"]},
              {"perceptual_seed", c.perceptual_seed},
              {"perceptual_widths", c.perceptual_widths},
              {"generator", generator_id},
              {"seed", c.seed}};
  return sha256_hex(sub.dump());
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json root;
  try {
    root = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(root);
}

// ---------------------------------------------------------------- datasets

inline Dataset load_dataset(const DatasetConfig& d) {
  if (d.kind == "synthetic") return make_synthetic_birds(d.synthetic);
  LoadedImages loaded = d.kind == "manifest" ? load_manifest(d.manifest, d.root, d.image_size)
                                             : load_image_directory(d.root, d.image_size);
  for (const auto& [p, why] : loaded.report.skipped) spdlog::warn("skipped {}: {}", p, why);
  return Dataset(std::move(loaded.images));
}

}  // namespace metairnet
