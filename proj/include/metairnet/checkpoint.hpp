#pragma once

// Single-file binary archive for model and generator weights.
//
// Layout: 8-byte magic "MIRNCKPT", u32 format version, u64 header length,
// JSON header, then raw little-endian float32 tensor data. The header lists
// each tensor's name, shape and element offset plus free-form metadata.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "metairnet/errors.hpp"
#include "metairnet/finetune.hpp"
#include "metairnet/meta_train.hpp"

namespace metairnet {

inline constexpr char kArchiveMagic[8] = {'M', 'I', 'R', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kArchiveVersion = 1;

struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw DataError("checkpoint has no tensor '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return true;
    }
    return false;
  }
};

inline void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json header;
  header["meta"] = archive.meta;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    const std::uint64_t len = text.size();
    out.write(kArchiveMagic, sizeof kArchiveMagic);
    out.write(reinterpret_cast<const char*>(&kArchiveVersion), sizeof kArchiveVersion);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : archive.tensors) {
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kArchiveMagic, sizeof magic) != 0) {
    throw DataError(path.string() + " is not a checkpoint archive");
  }
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kArchiveVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError(path.string() + ": truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": corrupt checkpoint header: " + e.what());
  }
  Archive archive;
  archive.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    Tensor<float> t(entry.at("shape").get<Shape>());
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) throw DataError(path.string() + ": truncated tensor data for " + entry.at("name").get<std::string>());
    archive.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return archive;
}

// ------------------------------------------------------------------ models

inline void save_model(const std::filesystem::path& path, MetaModel& model, const nlohmann::json& meta) {
  Archive a;
  a.meta = meta;
  a.meta["kind"] = "model";
  a.meta["has_fusion"] = static_cast<bool>(model.fusion);
  for (const auto& p : model.params()) a.tensors.emplace_back("param/" + p.name, p.var.value());
  for (const auto& b : model.buffers()) a.tensors.emplace_back("buffer/" + b.name, *b.tensor);
  write_archive(path, a);
}

/// Rebuilds the architecture from `config` and fills in the stored values.
inline MetaModel load_model(const std::filesystem::path& path, const TrainConfig& config,
                            nlohmann::json* meta = nullptr) {
  const Archive a = read_archive(path);
  if (a.meta.value("kind", "") != "model") throw DataError(path.string() + " is not a model checkpoint");
  TrainConfig shape = config;
  shape.mode = a.meta.value("has_fusion", false) ? AugmentationMode::metairnet : AugmentationMode::none;
  MetaModel model = make_model(shape);
  auto fill = [&](const std::string& name, Tensor<float>& dst) {
    const auto& src = a.tensor(name);
    if (src.shape() != dst.shape()) {
      throw DataError(path.string() + ": tensor " + name + " has shape " + shape_string(src.shape()) +
                      " but the configured model expects " + shape_string(dst.shape()));
    }
    dst = src;
  };
  for (const auto& p : model.params()) {
    Var<float> v = p.var;
    fill("param/" + p.name, v.mutable_value());
  }
  for (const auto& b : model.buffers()) fill("buffer/" + b.name, *b.tensor);
  if (meta) *meta = a.meta;
  return model;
}

// --------------------------------------------------------------- generator

inline nlohmann::json to_json(const GeneratorArch& arch) {
  return {{"latent_dim", arch.latent_dim}, {"embed_dim", arch.embed_dim}, {"num_classes", arch.num_classes},
          {"image_size", arch.image_size}, {"channels", arch.channels},   {"conditional", arch.conditional},
          {"eps", arch.eps}};
}

inline GeneratorArch generator_arch_from_json(const nlohmann::json& j) {
  GeneratorArch a;
  a.latent_dim = j.at("latent_dim");
  a.embed_dim = j.at("embed_dim");
  a.num_classes = j.at("num_classes");
  a.image_size = j.at("image_size");
  a.channels = j.at("channels").get<std::vector<std::size_t>>();
  a.conditional = j.at("conditional");
  a.eps = j.at("eps");
  a.validate();
  return a;
}

inline void save_generator(const std::filesystem::path& path, const PretrainedGenerator<float>& gen,
                           nlohmann::json meta = nlohmann::json::object()) {
  Archive a;
  a.meta = std::move(meta);
  a.meta["kind"] = "generator";
  a.meta["arch"] = to_json(gen.arch());
  GeneratorWeights<float> w = *gen.weights;
  for (const auto& [name, t] : w.named_tensors()) a.tensors.emplace_back("weights/" + name, *t);
  for (std::size_t i = 0; i < gen.bn.layers.size(); ++i) {
    const auto& l = gen.bn.layers[i];
    const std::string p = "bn" + std::to_string(i) + ".";
    if (gen.arch().conditional) {
      a.tensors.emplace_back(p + "gamma_weight", l.gamma_weight);
      a.tensors.emplace_back(p + "beta_weight", l.beta_weight);
    }
    a.tensors.emplace_back(p + "gamma_bias", l.gamma_bias);
    a.tensors.emplace_back(p + "beta_bias", l.beta_bias);
  }
  write_archive(path, a);
}

inline PretrainedGenerator<float> load_generator(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("generator checkpoint not found: " + path.string());
  const Archive a = read_archive(path);
  if (a.meta.value("kind", "") != "generator") throw DataError(path.string() + " is not a generator checkpoint");
  const GeneratorArch arch = generator_arch_from_json(a.meta.at("arch"));
  Rng unused(0);
  PretrainedGenerator<float> gen = init_generator<float>(arch, unused);
  auto w = std::make_shared<GeneratorWeights<float>>(*gen.weights);
  for (const auto& [name, t] : w->named_tensors()) {
    const auto& src = a.tensor("weights/" + name);
    if (src.shape() != t->shape()) throw DataError(path.string() + ": shape mismatch for " + name);
    *t = src;
  }
  gen.weights = w;
  for (std::size_t i = 0; i < gen.bn.layers.size(); ++i) {
    auto& l = gen.bn.layers[i];
    const std::string p = "bn" + std::to_string(i) + ".";
    if (arch.conditional) {
      l.gamma_weight = a.tensor(p + "gamma_weight");
      l.beta_weight = a.tensor(p + "beta_weight");
    }
    l.gamma_bias = a.tensor(p + "gamma_bias");
    l.beta_bias = a.tensor(p + "beta_bias");
  }
  return gen;
}

}  // namespace metairnet
