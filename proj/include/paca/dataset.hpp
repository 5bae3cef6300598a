// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "paca/core.hpp"

namespace paca::data {

// Procedural 10-class shape/texture dataset at 32x32x3. Colors, geometry,
// contrast and noise are randomized per image; the noise level controls how
// hard the classification task is.
struct ShapesConfig {
  std::int64_t count = 1000;
  std::int64_t image_size = 32;
  double noise = 0.14;         // gaussian pixel noise stddev
  double min_contrast = 0.22;  // minimum |foreground - background| per image
  std::uint64_t seed = 0;
};

inline constexpr int kShapeClassCount = 10;
const char* shape_class_name(std::int64_t label);

core::ImageBatch make_shapes(const ShapesConfig& cfg);

}  // namespace paca::data
