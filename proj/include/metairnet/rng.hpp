#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "metairnet/tensor.hpp"

namespace metairnet {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of stream `stream` / item `index` under a master seed. Evaluation
/// episodes use (seed, kEpisodeStream, episode_index) so any episode can be
/// replayed on its own.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) {
  return mix_seed(mix_seed(mix_seed(master) ^ stream) + index);
}

inline Rng make_rng(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) {
  return Rng(derive_seed(master, stream, index));
}

namespace streams {
inline constexpr std::uint64_t kEpisode = 1;
inline constexpr std::uint64_t kAugment = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kGenerator = 4;
inline constexpr std::uint64_t kDataset = 5;
inline constexpr std::uint64_t kSplit = 6;
inline constexpr std::uint64_t kValidation = 7;
inline constexpr std::uint64_t kAdapt = 8;
inline constexpr std::uint64_t kTrain = 9;
}  // namespace streams

template <typename T>
Tensor<T> normal_tensor(Shape shape, Rng& rng, T stddev = T{1}) {
  Tensor<T> out(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& v : out.values()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, Rng& rng, T low, T high) {
  Tensor<T> out(std::move(shape));
  std::uniform_real_distribution<double> dist(static_cast<double>(low), static_cast<double>(high));
  for (auto& v : out.values()) v = static_cast<T>(dist(rng));
  return out;
}

/// Uniform integer in [0, bound).
inline std::size_t uniform_index(Rng& rng, std::size_t bound) {
  return std::uniform_int_distribution<std::size_t>(0, bound - 1)(rng);
}

inline double uniform_real(Rng& rng, double low, double high) {
  return std::uniform_real_distribution<double>(low, high)(rng);
}

}  // namespace metairnet
