// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "paca/tensor.hpp"

namespace paca::ckpt {

// Model checkpoint container: a directory with
//   meta.json            structured metadata (kind, config, provenance)
//   weights/<name>.npy   one array per parameter/buffer, keyed by layer path
// Round trips are bit-exact; saves are atomic (temp dir + rename).
struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
};

void save(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load(const std::filesystem::path& dir);

// FNV-1a over (name, raw bytes) of every tensor in name order; hex string.
std::string weights_checksum(const std::map<std::string, Tensor>& tensors);

}  // namespace paca::ckpt
