#pragma once

// Procedural fine-grained dataset: stylised birds whose classes differ only
// in small attribute shifts (plumage hue, wing bars, beak, crest, tail).
// Within-class variation covers pose, scale, facing, background and
// lighting. Used for desk-scale end-to-end runs.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "metairnet/data.hpp"
#include "metairnet/rng.hpp"

namespace metairnet {

struct SyntheticConfig {
  std::size_t classes = 20;
  std::size_t per_class = 20;
  std::size_t image_size = 64;
  std::uint64_t seed = 0;
  /// Scales the distance between class attribute vectors (1 = default difficulty).
  double class_separation = 1.0;
  /// Scales within-class attribute noise.
  double intra_class_noise = 1.0;
};

namespace synthetic_detail {

struct Rgb {
  double r, g, b;
};

inline Rgb hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

inline Rgb mix(Rgb a, Rgb b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

struct BirdAttributes {
  double body_hue, body_sat, wing_hue, belly_light;
  double head_size, beak_length, beak_angle, tail_length, crest;
  double wing_bars, eye_ring;
};

inline BirdAttributes class_attributes(Rng& rng, double sep) {
  auto around = [&](double center, double spread) { return center + sep * uniform_real(rng, -spread, spread); };
  BirdAttributes a{};
  a.body_hue = around(0.08, 0.07);
  a.body_sat = std::clamp(around(0.6, 0.2), 0.2, 0.95);
  a.wing_hue = around(0.58, 0.12);
  a.belly_light = std::clamp(around(0.55, 0.3), 0.0, 1.0);
  a.head_size = around(0.5, 0.12);
  a.beak_length = around(0.3, 0.15);
  a.beak_angle = around(0.0, 0.35);
  a.tail_length = around(0.45, 0.2);
  a.crest = std::clamp(around(0.4, 0.4), 0.0, 1.0);
  a.wing_bars = std::clamp(around(1.5, 1.5), 0.0, 3.0);
  a.eye_ring = std::clamp(around(0.5, 0.5), 0.0, 1.0);
  return a;
}

inline BirdAttributes jitter(const BirdAttributes& c, Rng& rng, double noise) {
  auto j = [&](double v, double s) { return v + noise * uniform_real(rng, -s, s); };
  BirdAttributes a = c;
  a.body_hue = j(c.body_hue, 0.015);
  a.body_sat = std::clamp(j(c.body_sat, 0.05), 0.1, 1.0);
  a.wing_hue = j(c.wing_hue, 0.02);
  a.belly_light = std::clamp(j(c.belly_light, 0.08), 0.0, 1.0);
  a.head_size = j(c.head_size, 0.03);
  a.beak_length = std::max(0.05, j(c.beak_length, 0.04));
  a.beak_angle = j(c.beak_angle, 0.08);
  a.tail_length = std::max(0.1, j(c.tail_length, 0.05));
  return a;
}

inline bool in_ellipse(double x, double y, double cx, double cy, double rx, double ry, double angle = 0) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double dx = x - cx, dy = y - cy;
  const double u = (ca * dx + sa * dy) / rx, v = (-sa * dx + ca * dy) / ry;
  return u * u + v * v <= 1.0;
}

inline bool in_triangle(double x, double y, std::array<double, 6> t) {
  auto cross = [](double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
  };
  const double d1 = cross(t[0], t[1], t[2], t[3], x, y);
  const double d2 = cross(t[2], t[3], t[4], t[5], x, y);
  const double d3 = cross(t[4], t[5], t[0], t[1], x, y);
  const bool neg = d1 < 0 || d2 < 0 || d3 < 0, pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

/// Colour of the scene at normalized coordinates (x, y) in [-1, 1]^2,
/// bird facing +x, centred at origin with unit body half-width.
inline Rgb shade(double x, double y, const BirdAttributes& a, Rgb background) {
  const Rgb body = hsv(a.body_hue, a.body_sat, 0.75);
  const Rgb wing = hsv(a.wing_hue, 0.55, 0.55);
  const Rgb belly = mix(body, Rgb{0.95, 0.92, 0.85}, a.belly_light);
  const Rgb dark{0.08, 0.07, 0.06};
  Rgb color = background;
  // tail
  if (in_triangle(x, y, {-0.55, -0.05, -0.55 - a.tail_length, -0.25, -0.55 - a.tail_length, 0.2})) color = wing;
  // body and belly
  if (in_ellipse(x, y, 0.0, 0.05, 0.62, 0.38)) color = (y > 0.12) ? belly : body;
  // wing with bars
  if (in_ellipse(x, y, -0.12, -0.02, 0.4, 0.2, 0.25)) {
    color = wing;
    const int bars = static_cast<int>(std::lround(a.wing_bars));
    for (int b = 0; b < bars; ++b) {
      const double bx = -0.3 + 0.14 * b;
      if (std::abs(x - bx) < 0.035) color = Rgb{0.92, 0.9, 0.85};
    }
  }
  // head and crest
  const double hx = 0.55, hy = -0.3, hr = 0.25 * a.head_size / 0.5;
  if (a.crest > 0.25 && in_triangle(x, y, {hx - 0.1, hy - hr * 0.6, hx - 0.25, hy - hr - 0.25 * a.crest, hx + 0.05, hy - hr * 0.8}))
    color = body;
  if (in_ellipse(x, y, hx, hy, hr, hr)) color = body;
  // beak
  const double tip_x = hx + hr + a.beak_length * std::cos(a.beak_angle);
  const double tip_y = hy + a.beak_length * std::sin(a.beak_angle);
  if (in_triangle(x, y, {hx + hr * 0.8, hy - 0.06, hx + hr * 0.8, hy + 0.06, tip_x, tip_y})) color = Rgb{0.9, 0.7, 0.2};
  // eye with optional ring
  const double ex = hx + hr * 0.35, ey = hy - hr * 0.2;
  if (a.eye_ring > 0.5 && in_ellipse(x, y, ex, ey, 0.075, 0.075)) color = Rgb{0.95, 0.95, 0.95};
  if (in_ellipse(x, y, ex, ey, 0.045, 0.045)) color = dark;
  return color;
}

}  // namespace synthetic_detail

/// Renders one bird. Exposed for tests and previews.
inline Image render_bird(const synthetic_detail::BirdAttributes& attrs, std::size_t size, Rng& rng) {
  using namespace synthetic_detail;
  const double scale = uniform_real(rng, 0.55, 0.72);
  const double ox = uniform_real(rng, -0.12, 0.12), oy = uniform_real(rng, -0.1, 0.12);
  const double facing = uniform_real(rng, 0, 1) < 0.5 ? -1.0 : 1.0;
  const double tilt = uniform_real(rng, -0.2, 0.2);
  const Rgb sky = hsv(uniform_real(rng, 0.2, 0.62), uniform_real(rng, 0.1, 0.4), uniform_real(rng, 0.55, 0.95));
  const Rgb ground = hsv(uniform_real(rng, 0.15, 0.4), uniform_real(rng, 0.2, 0.5), uniform_real(rng, 0.3, 0.6));
  const double horizon = uniform_real(rng, 0.2, 0.8);
  const double light = uniform_real(rng, 0.8, 1.15);
  std::normal_distribution<double> noise(0.0, 0.03);
  Image out({3, size, size});
  const double ct = std::cos(tilt), st = std::sin(tilt);
  constexpr int kSuper = 2;
  for (std::size_t py = 0; py < size; ++py) {
    for (std::size_t px = 0; px < size; ++px) {
      Rgb acc{0, 0, 0};
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx) {
          const double u = ((static_cast<double>(px) + (sx + 0.5) / kSuper) / static_cast<double>(size)) * 2 - 1;
          const double v = ((static_cast<double>(py) + (sy + 0.5) / kSuper) / static_cast<double>(size)) * 2 - 1;
          const Rgb bg = mix(sky, ground, std::clamp((v * 0.5 + 0.5 - horizon) * 6 + 0.5, 0.0, 1.0));
          const double lx = (u - ox) / scale * facing, ly = (v - oy) / scale;
          const double rx = ct * lx + st * ly, ry = -st * lx + ct * ly;
          const Rgb c = shade(rx, ry, attrs, bg);
          acc.r += c.r;
          acc.g += c.g;
          acc.b += c.b;
        }
      const double k = light / (kSuper * kSuper);
      const double rgb[3] = {acc.r * k, acc.g * k, acc.b * k};
      for (std::size_t c = 0; c < 3; ++c) {
        out.at(c, py, px) = static_cast<float>(std::clamp((rgb[c] + noise(rng)) * 2 - 1, -1.0, 1.0));
      }
    }
  }
  return out;
}

inline Dataset make_synthetic_birds(const SyntheticConfig& config) {
  Rng class_rng = make_rng(config.seed, streams::kDataset, 0);
  std::vector<synthetic_detail::BirdAttributes> classes;
  for (std::size_t c = 0; c < config.classes; ++c) {
    classes.push_back(synthetic_detail::class_attributes(class_rng, config.class_separation));
  }
  std::vector<LabeledImage> items;
  for (std::size_t c = 0; c < config.classes; ++c) {
    for (std::size_t i = 0; i < config.per_class; ++i) {
      Rng rng = make_rng(config.seed, streams::kDataset, 1 + c * 100003 + i);
      auto attrs = synthetic_detail::jitter(classes[c], rng, config.intra_class_noise);
      items.push_back({render_bird(attrs, config.image_size, rng), static_cast<ClassId>(c), {},
                       "synthetic:" + std::to_string(c) + "/" + std::to_string(i)});
    }
  }
  return Dataset(std::move(items));
}

/// Writes a dataset as a class-per-subdirectory PNG tree.
inline void write_dataset(const Dataset& dataset, const std::filesystem::path& root) {
  std::map<ClassId, std::size_t> counter;
  for (const auto& item : dataset.items()) {
    char name[64];
    std::snprintf(name, sizeof(name), "class_%03d/%04zu.png", item.label, counter[item.label]++);
    save_image(root / name, item.image);
  }
}

}  // namespace metairnet
