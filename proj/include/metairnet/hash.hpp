#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "metairnet/tensor.hpp"

namespace metairnet {

/// Hex SHA-256 digest, truncated to `hex_chars`.
inline std::string sha256_hex(std::span<const std::uint8_t> bytes, std::size_t hex_chars = 16) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &length) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < length && hex.size() < hex_chars; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex.substr(0, hex_chars);
}

inline std::string sha256_hex(std::string_view text, std::size_t hex_chars = 16) {
  return sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()),
                    hex_chars);
}

/// 64-bit FNV-1a; stable across platforms, used to key rng streams by id.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) h = (h ^ ch) * 1099511628211ull;
  return h;
}

/// Content hash of a tensor: shape followed by raw values.
template <typename T>
std::string tensor_hash(const Tensor<T>& tensor) {
  std::string bytes = shape_string(tensor.shape());
  bytes.append(reinterpret_cast<const char*>(tensor.data()), tensor.size() * sizeof(T));
  return sha256_hex(bytes);
}

}  // namespace metairnet
