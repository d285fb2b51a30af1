#pragma once

// Minimal raster charts written as PNG: bar histograms and line series.
// No text rendering; values go in the accompanying summary tables.

#include <algorithm>
#include <array>
#include <filesystem>
#include <vector>

#include "metairnet/image.hpp"

namespace metairnet::plot {

using Color = std::array<std::uint8_t, 3>;

inline constexpr Color kBlue{52, 101, 164};
inline constexpr Color kOrange{245, 121, 0};
inline constexpr Color kGreen{78, 154, 6};
inline constexpr Color kGrey{136, 138, 133};

class Canvas {
 public:
  Canvas(std::size_t width, std::size_t height) : rgb_{height, width, std::vector<std::uint8_t>(width * height * 3, 255)} {}

  void pixel(long x, long y, Color c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(rgb_.width) || y >= static_cast<long>(rgb_.height)) return;
    const std::size_t o = (static_cast<std::size_t>(y) * rgb_.width + static_cast<std::size_t>(x)) * 3;
    std::copy(c.begin(), c.end(), rgb_.pixels.begin() + static_cast<long>(o));
  }
  void rect(long x0, long y0, long x1, long y1, Color c) {
    for (long y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
      for (long x = std::min(x0, x1); x <= std::max(x0, x1); ++x) pixel(x, y, c);
  }
  void line(long x0, long y0, long x1, long y1, Color c) {
    const long steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1L});
    for (long i = 0; i <= steps; ++i) {
      pixel(x0 + (x1 - x0) * i / steps, y0 + (y1 - y0) * i / steps, c);
    }
  }
  void save(const std::filesystem::path& path) const {
    write_png(path, rgb_);
  }
  std::size_t width() const { return rgb_.width; }
  std::size_t height() const { return rgb_.height; }

 private:
  RgbBuffer rgb_;
};

inline constexpr long kMargin = 20;

inline void axes(Canvas& c) {
  const long w = static_cast<long>(c.width()), h = static_cast<long>(c.height());
  c.line(kMargin, h - kMargin, w - kMargin, h - kMargin, kGrey);
  c.line(kMargin, kMargin, kMargin, h - kMargin, kGrey);
}

/// One bar per bin, heights scaled to the largest count.
inline void histogram_png(const std::filesystem::path& path, const std::vector<std::size_t>& counts,
                          Color color = kBlue, std::size_t width = 520, std::size_t height = 320) {
  Canvas c(width, height);
  axes(c);
  const std::size_t top = std::max<std::size_t>(1, counts.empty() ? 1 : *std::max_element(counts.begin(), counts.end()));
  const double bar = static_cast<double>(width - 2 * kMargin) / static_cast<double>(std::max<std::size_t>(1, counts.size()));
  const long base = static_cast<long>(height) - kMargin - 1;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) continue;
    const long x0 = kMargin + 1 + static_cast<long>(static_cast<double>(i) * bar);
    const long x1 = kMargin + static_cast<long>(static_cast<double>(i + 1) * bar) - 1;
    const long bh = static_cast<long>(static_cast<double>(counts[i]) / static_cast<double>(top) *
                                      static_cast<double>(height - 2 * kMargin - 1));
    c.rect(x0, base - bh + 1, std::max(x0, x1), base, color);
  }
  c.save(path);
}

/// Polylines sharing one y scale starting at zero.
inline void series_png(const std::filesystem::path& path, const std::vector<std::vector<double>>& series,
                       const std::vector<Color>& colors, std::size_t width = 520, std::size_t height = 320) {
  Canvas c(width, height);
  axes(c);
  double top = 0;
  std::size_t longest = 1;
  for (const auto& s : series) {
    for (double v : s) top = std::max(top, v);
    longest = std::max(longest, s.size());
  }
  if (top <= 0) top = 1;
  const double span_x = static_cast<double>(width - 2 * kMargin) / static_cast<double>(std::max<std::size_t>(1, longest - 1));
  const double span_y = static_cast<double>(height - 2 * kMargin);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Color col = colors.empty() ? kBlue : colors[k % colors.size()];
    auto px = [&](std::size_t i) { return kMargin + static_cast<long>(static_cast<double>(i) * span_x); };
    auto py = [&](double v) { return static_cast<long>(height) - kMargin - static_cast<long>(v / top * span_y); };
    const auto& s = series[k];
    for (std::size_t i = 0; i < s.size(); ++i) {
      c.rect(px(i) - 1, py(s[i]) - 1, px(i) + 1, py(s[i]) + 1, col);
      if (i > 0) c.line(px(i - 1), py(s[i - 1]), px(i), py(s[i]), col);
    }
  }
  c.save(path);
}

}  // namespace metairnet::plot
