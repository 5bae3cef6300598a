// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#include "paca/npy.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "paca/error.hpp"

namespace paca::io {
namespace {

constexpr char kMagic[] = "\x93NUMPY";

std::string header_dict(const char* descr, const Shape& shape) {
  std::ostringstream os;
  os << "{'descr': '" << descr << "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << shape[i];
    if (shape.size() == 1 || i + 1 < shape.size()) os << ",";
    if (i + 1 < shape.size()) os << " ";
  }
  os << "), }";
  return os.str();
}

void write_raw(const std::filesystem::path& path, const char* descr,
               const Shape& shape, const void* data, std::size_t bytes) {
  std::string dict = header_dict(descr, shape);
  // pad so that magic(6)+version(2)+hlen(2)+header is a multiple of 64
  std::size_t unpadded = 10 + dict.size() + 1;
  std::size_t padded = (unpadded + 63) / 64 * 64;
  dict.append(padded - unpadded, ' ');
  dict.push_back('\n');

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw LoadError("cannot open for writing: " + path.string());
  f.write(kMagic, 6);
  const unsigned char ver[2] = {1, 0};
  f.write(reinterpret_cast<const char*>(ver), 2);
  const std::uint16_t hlen = static_cast<std::uint16_t>(dict.size());
  f.write(reinterpret_cast<const char*>(&hlen), 2);
  f.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) throw LoadError("short write: " + path.string());
}

struct ParsedHeader {
  std::string descr;
  Shape shape;
};

ParsedHeader parse_header(std::ifstream& f, const std::filesystem::path& path) {
  char magic[6];
  f.read(magic, 6);
  if (!f || std::memcmp(magic, kMagic, 6) != 0) {
    throw LoadError("not an NPY file: " + path.string());
  }
  unsigned char ver[2];
  f.read(reinterpret_cast<char*>(ver), 2);
  std::uint16_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 2);
  std::string dict(hlen, '\0');
  f.read(dict.data(), hlen);
  if (!f) throw LoadError("truncated NPY header: " + path.string());

  ParsedHeader h;
  auto find_key = [&](const std::string& key) {
    auto pos = dict.find("'" + key + "'");
    if (pos == std::string::npos) {
      throw LoadError("NPY header missing " + key + ": " + path.string());
    }
    return dict.find(':', pos);
  };
  {
    auto pos = find_key("descr");
    auto q1 = dict.find('\'', pos + 1);
    auto q2 = dict.find('\'', q1 + 1);
    h.descr = dict.substr(q1 + 1, q2 - q1 - 1);
  }
  if (dict.find("'fortran_order': False") == std::string::npos) {
    throw LoadError("NPY: only C-order supported: " + path.string());
  }
  {
    auto pos = find_key("shape");
    auto p1 = dict.find('(', pos);
    auto p2 = dict.find(')', p1);
    std::istringstream is(dict.substr(p1 + 1, p2 - p1 - 1));
    std::string tok;
    while (std::getline(is, tok, ',')) {
      std::size_t b = tok.find_first_not_of(" \t");
      if (b == std::string::npos) continue;
      std::size_t e = tok.find_last_not_of(" \t");
      h.shape.push_back(std::stoll(tok.substr(b, e - b + 1)));
    }
  }
  return h;
}

}  // namespace

void write_npy(const std::filesystem::path& path, const Tensor& t) {
  write_raw(path, "<f8", t.shape(), t.data(),
            static_cast<std::size_t>(t.size()) * sizeof(double));
}

Tensor read_npy(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open: " + path.string());
  ParsedHeader h = parse_header(f, path);
  if (h.descr != "<f8") throw LoadError("NPY: expected <f8 in " + path.string());
  const std::int64_t n = numel(h.shape);
  std::vector<double> data(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(data.data()),
         static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (f.gcount() != static_cast<std::streamsize>(data.size() * sizeof(double))) {
    throw LoadError("truncated NPY payload: " + path.string());
  }
  return Tensor(h.shape, std::move(data));
}

void write_npy_i64(const std::filesystem::path& path,
                   const std::vector<std::int64_t>& v) {
  write_raw(path, "<i8", Shape{static_cast<std::int64_t>(v.size())}, v.data(),
            v.size() * sizeof(std::int64_t));
}

std::vector<std::int64_t> read_npy_i64(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open: " + path.string());
  ParsedHeader h = parse_header(f, path);
  if (h.descr != "<i8") throw LoadError("NPY: expected <i8 in " + path.string());
  const std::int64_t n = numel(h.shape);
  std::vector<std::int64_t> data(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(data.data()),
         static_cast<std::streamsize>(data.size() * sizeof(std::int64_t)));
  if (f.gcount() != static_cast<std::streamsize>(data.size() * sizeof(std::int64_t))) {
    throw LoadError("truncated NPY payload: " + path.string());
  }
  return data;
}

}  // namespace paca::io
