// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace paca {

// splitmix64: the mixing function used to fan a master seed out into
// independent per-stage seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d49bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed fan-out scheme: every pipeline stage draws its seed as
// derive_seed(master, stage_name, counter). Stages can therefore rerun
// independently and still reproduce bit-identical streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stage,
                                 std::uint64_t counter = 0) {
  return splitmix64(master ^ splitmix64(fnv1a64(stage) + counter));
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view stage,
                                std::uint64_t counter = 0) {
  return std::mt19937_64(derive_seed(master, stage, counter));
}

}  // namespace paca
