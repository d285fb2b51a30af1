#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "metairnet/errors.hpp"
#include "metairnet/tensor.hpp"

namespace metairnet {

/// A (3, H, W) image with values in a declared range, [-1, 1] by default.
using Image = Tensor<float>;

struct ValueRange {
  float low = -1.0f;
  float high = 1.0f;
};

/// 8-bit interleaved RGB pixels as stored on disk.
struct RgbBuffer {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3
};

inline float byte_to_value(std::uint8_t v, ValueRange range) {
  return range.low + (range.high - range.low) * (static_cast<float>(v) / 255.0f);
}

inline std::uint8_t value_to_byte(float v, ValueRange range) {
  const float unit = (v - range.low) / (range.high - range.low);
  return static_cast<std::uint8_t>(std::lround(std::clamp(unit, 0.0f, 1.0f) * 255.0f));
}

inline Image to_image(const RgbBuffer& rgb, ValueRange range = {}) {
  Image out({3, rgb.height, rgb.width});
  for (std::size_t y = 0; y < rgb.height; ++y)
    for (std::size_t x = 0; x < rgb.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.at(c, y, x) = byte_to_value(rgb.pixels[(y * rgb.width + x) * 3 + c], range);
  return out;
}

inline RgbBuffer to_rgb(const Image& image, ValueRange range = {}) {
  RgbBuffer out{image.dim(1), image.dim(2), std::vector<std::uint8_t>(image.dim(1) * image.dim(2) * 3)};
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.pixels[(y * out.width + x) * 3 + c] = value_to_byte(image.at(c, y, x), range);
  return out;
}

/// Bilinear resampling with half-pixel centers.
inline Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  const std::size_t channels = image.dim(0), ih = image.dim(1), iw = image.dim(2);
  if (ih == height && iw == width) return image;
  Image out({channels, height, width});
  const float sy = static_cast<float>(ih) / static_cast<float>(height);
  const float sx = static_cast<float>(iw) / static_cast<float>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const float fy = std::clamp((static_cast<float>(y) + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(ih - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, ih - 1);
    const float wy = fy - static_cast<float>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const float fx = std::clamp((static_cast<float>(x) + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(iw - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, iw - 1);
      const float wx = fx - static_cast<float>(x0);
      for (std::size_t c = 0; c < channels; ++c) {
        const float top = image.at(c, y0, x0) * (1 - wx) + image.at(c, y0, x1) * wx;
        const float bottom = image.at(c, y1, x0) * (1 - wx) + image.at(c, y1, x1) * wx;
        out.at(c, y, x) = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline RgbBuffer read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DataError("cannot open " + path.string());
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8)) {
    throw DataError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed");
  }
  RgbBuffer out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  if (png_get_rowbytes(png, info) != out.width * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unsupported PNG layout: " + path.string());
  }
  out.pixels.resize(out.width * out.height * 3);
  rows.resize(out.height);
  for (std::size_t y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + y * out.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

/// Binary PPM (P6, maxval 255).
inline RgbBuffer read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  auto next_int = [&]() {
    int value = 0;
    while (in >> std::ws && in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
    }
    if (!(in >> value)) throw DataError("malformed PPM header: " + path.string());
    return value;
  };
  if (magic != "P6") throw DataError("unsupported PPM variant in " + path.string());
  RgbBuffer out;
  out.width = static_cast<std::size_t>(next_int());
  out.height = static_cast<std::size_t>(next_int());
  if (next_int() != 255) throw DataError("PPM maxval must be 255: " + path.string());
  in.get();
  out.pixels.resize(out.width * out.height * 3);
  if (!in.read(reinterpret_cast<char*>(out.pixels.data()), static_cast<std::streamsize>(out.pixels.size()))) {
    throw DataError("truncated PPM: " + path.string());
  }
  return out;
}

}  // namespace detail

/// Decodes a PNG or binary PPM file.
inline RgbBuffer read_rgb(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".ppm") return detail::read_ppm(path);
  return detail::read_png(path);
}

inline void write_png(const std::filesystem::path& path, const RgbBuffer& rgb) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(rgb.width), static_cast<png_uint_32>(rgb.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < rgb.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(rgb.pixels.data() + y * rgb.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline Image load_image(const std::filesystem::path& path, std::size_t size, ValueRange range = {}) {
  return resize_bilinear(to_image(read_rgb(path), range), size, size);
}

inline void save_image(const std::filesystem::path& path, const Image& image, ValueRange range = {}) {
  write_png(path, to_rgb(image, range));
}

/// Clamps every value into the range (used after lossy operations).
inline void clamp_to_range(Image& image, ValueRange range = {}) {
  for (auto& v : image.values()) v = std::clamp(v, range.low, range.high);
}

}  // namespace metairnet
