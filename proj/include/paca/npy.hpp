// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "paca/tensor.hpp"

namespace paca::io {

// NPY v1.0 container, little-endian. Doubles carry '<f8', index vectors
// '<i8'. Writes are byte-deterministic for identical inputs.
void write_npy(const std::filesystem::path& path, const Tensor& t);
Tensor read_npy(const std::filesystem::path& path);

void write_npy_i64(const std::filesystem::path& path,
                   const std::vector<std::int64_t>& v);
std::vector<std::int64_t> read_npy_i64(const std::filesystem::path& path);

}  // namespace paca::io
