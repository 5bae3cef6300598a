// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#include "paca/checkpoint.hpp"

#include <fstream>

#include "paca/error.hpp"
#include "paca/npy.hpp"
#include "paca/rng.hpp"

namespace paca::ckpt {

namespace fs = std::filesystem;

void save(const fs::path& dir, const Checkpoint& ckpt) {
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp / "weights");

  nlohmann::json meta = ckpt.meta;
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.tensors) names.push_back(name);
  meta["tensors"] = names;
  meta["weights_checksum"] = weights_checksum(ckpt.tensors);
  {
    std::ofstream f(tmp / "meta.json");
    if (!f) throw LoadError("cannot write " + (tmp / "meta.json").string());
    f << meta.dump(2) << "\n";
  }
  for (const auto& [name, t] : ckpt.tensors) {
    io::write_npy(tmp / "weights" / (name + ".npy"), t);
  }
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

Checkpoint load(const fs::path& dir) {
  if (!fs::exists(dir / "meta.json")) {
    throw LoadError("checkpoint not found: " + dir.string());
  }
  Checkpoint ckpt;
  {
    std::ifstream f(dir / "meta.json");
    try {
      ckpt.meta = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw LoadError("bad checkpoint metadata in " + dir.string() + ": " + e.what());
    }
  }
  if (!ckpt.meta.contains("tensors")) {
    throw LoadError("checkpoint missing tensor manifest: " + dir.string());
  }
  for (const auto& name : ckpt.meta["tensors"]) {
    const std::string n = name.get<std::string>();
    ckpt.tensors.emplace(n, io::read_npy(dir / "weights" / (n + ".npy")));
  }
  if (ckpt.meta.contains("weights_checksum")) {
    const std::string want = ckpt.meta["weights_checksum"].get<std::string>();
    const std::string got = weights_checksum(ckpt.tensors);
    if (want != got) {
      throw LoadError("checkpoint checksum mismatch in " + dir.string());
    }
  }
  return ckpt;
}

std::string weights_checksum(const std::map<std::string, Tensor>& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : tensors) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.data(), static_cast<std::size_t>(t.size()) * sizeof(double), h);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace paca::ckpt
