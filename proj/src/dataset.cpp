// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#include "paca/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "paca/error.hpp"
#include "paca/rng.hpp"

namespace paca::data {
namespace {

constexpr double kPi = 3.14159265358979323846;

struct Geometry {
  double cx, cy, r, thickness, freq, phase, phase2, angle, pitch;
};

double smoothstep(double edge, double width, double d) {
  // 1 inside (d < edge), 0 outside, linear ramp of `width` pixels
  if (d <= edge - width) return 1.0;
  if (d >= edge + width) return 0.0;
  return (edge + width - d) / (2.0 * width);
}

double shape_mask(std::int64_t label, double x, double y, const Geometry& g) {
  const double dx = x - g.cx, dy = y - g.cy;
  const double d = std::sqrt(dx * dx + dy * dy);
  switch (label) {
    case 0:  // disk
      return smoothstep(g.r, 1.0, d);
    case 1:  // ring
      return smoothstep(g.thickness, 1.0, std::abs(d - g.r));
    case 2:  // filled square
      return smoothstep(g.r, 1.0, std::max(std::abs(dx), std::abs(dy)));
    case 3: {  // cross
      const double arm1 = std::max(std::abs(dx) - g.thickness, std::abs(dy) - g.r);
      const double arm2 = std::max(std::abs(dy) - g.thickness, std::abs(dx) - g.r);
      return smoothstep(0.0, 1.0, std::min(arm1, arm2));
    }
    case 4: {  // upward triangle
      const double top = g.cy - g.r;
      const double base = g.cy + 0.8 * g.r;
      const double half_width = (y - top) / (base - top) * g.r;
      if (y < top || y > base) return 0.0;
      return smoothstep(half_width, 1.0, std::abs(dx));
    }
    case 5:  // horizontal stripes
      return 0.5 + 0.5 * std::sin(2.0 * kPi * g.freq * y + g.phase);
    case 6:  // vertical stripes
      return 0.5 + 0.5 * std::sin(2.0 * kPi * g.freq * x + g.phase);
    case 7: {  // diagonal stripes
      const double u = (x * std::cos(g.angle) + y * std::sin(g.angle));
      return 0.5 + 0.5 * std::sin(2.0 * kPi * g.freq * u + g.phase);
    }
    case 8:  // checkerboard
      return 0.5 + 0.5 * std::sin(2.0 * kPi * g.freq * x + g.phase) *
                       std::sin(2.0 * kPi * g.freq * y + g.phase2);
    case 9: {  // dot grid
      const double px = std::fmod(x * g.pitch + g.phase, 1.0);
      const double py = std::fmod(y * g.pitch + g.phase2, 1.0);
      const double ddx = std::min(px, 1.0 - px) / g.pitch;
      const double ddy = std::min(py, 1.0 - py) / g.pitch;
      const double dist = std::sqrt(ddx * ddx + ddy * ddy);
      return smoothstep(g.r * 0.28, 1.0, dist);
    }
    default:
      throw InvalidInputError("shape_mask: bad label");
  }
}

}  // namespace

const char* shape_class_name(std::int64_t label) {
  static const char* names[kShapeClassCount] = {
      "disk", "ring", "square", "cross", "triangle",
      "h_stripes", "v_stripes", "d_stripes", "checker", "dots"};
  if (label < 0 || label >= kShapeClassCount) return "?";
  return names[label];
}

core::ImageBatch make_shapes(const ShapesConfig& cfg) {
  if (cfg.count < 1) throw InvalidInputError("make_shapes: count must be >= 1");
  const std::int64_t s = cfg.image_size;
  core::ImageBatch batch;
  batch.pixels = Tensor(Shape{cfg.count, 3, s, s});
  batch.labels.resize(static_cast<std::size_t>(cfg.count));

  for (std::int64_t i = 0; i < cfg.count; ++i) {
    const std::int64_t label = i % kShapeClassCount;
    batch.labels[static_cast<std::size_t>(i)] = label;
    std::mt19937_64 rng(derive_seed(cfg.seed, "shapes", static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    // colors with enforced contrast on at least one channel
    double bg[3], fg[3];
    for (int c = 0; c < 3; ++c) bg[c] = 0.15 + 0.7 * u01(rng);
    for (int c = 0; c < 3; ++c) {
      const double dir = u01(rng) < 0.5 ? -1.0 : 1.0;
      const double mag = cfg.min_contrast + (0.55 - cfg.min_contrast) * u01(rng);
      fg[c] = std::clamp(bg[c] + dir * mag, 0.02, 0.98);
    }

    Geometry g{};
    g.cx = s * (0.38 + 0.24 * u01(rng));
    g.cy = s * (0.38 + 0.24 * u01(rng));
    g.r = s * (0.17 + 0.14 * u01(rng));
    g.thickness = std::max(1.2, g.r * (0.22 + 0.18 * u01(rng)));
    g.freq = (2.0 + 2.2 * u01(rng)) / s;
    g.phase = 2.0 * kPi * u01(rng);
    g.phase2 = 2.0 * kPi * u01(rng);
    g.angle = kPi / 4.0 + (u01(rng) - 0.5) * 0.5;
    g.pitch = 1.0 / (s * (0.18 + 0.1 * u01(rng)));

    const double sigma = cfg.noise * (0.6 + 0.8 * u01(rng));
    std::normal_distribution<double> noise(0.0, sigma);

    double* img = batch.pixels.data() + i * 3 * s * s;
    for (std::int64_t y = 0; y < s; ++y) {
      for (std::int64_t x = 0; x < s; ++x) {
        const double m = shape_mask(label, static_cast<double>(x),
                                    static_cast<double>(y), g);
        for (int c = 0; c < 3; ++c) {
          double v = bg[c] + m * (fg[c] - bg[c]) + noise(rng);
          img[c * s * s + y * s + x] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  }
  return batch;
}

}  // namespace paca::data
