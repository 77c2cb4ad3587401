/* Copyright 2026 The trajtta Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "trajtta/npy.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <regex>

#include "trajtta/errors.hpp"

namespace trajtta::npy {

static_assert(std::endian::native == std::endian::little,
              "npy payloads are written in native little-endian order");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::size_t item_size(const std::string& dtype) {
  if (dtype == "<f8") return 8;
  if (dtype == "<i4") return 4;
  return 0;
}

void write_raw(const std::filesystem::path& path, const char* data, std::size_t nbytes,
               const std::string& dtype, const std::vector<std::size_t>& shape) {
  std::string shape_str = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    shape_str += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) shape_str += ",";
    if (i + 1 < shape.size()) shape_str += " ";
  }
  shape_str += ")";
  std::string header = "{'descr': '" + dtype + "', 'fortran_order': False, 'shape': " +
                       shape_str + ", }";
  // magic(6) + version(2) + header_len(2) + header + '\n' padded to 64 bytes
  const std::size_t unpadded = kMagicLen + 2 + 2 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(kMagic, kMagicLen);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto hlen = static_cast<std::uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&hlen), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(data, static_cast<std::streamsize>(nbytes));
  if (!out) throw IoError(path.string(), "write failed");
}

}  // namespace

std::size_t Array::count() const { return product(shape); }

std::vector<double> Array::as_double() const {
  if (dtype != "<f8") throw ArgumentError("expected float64 array, found " + dtype);
  std::vector<double> out(count());
  std::memcpy(out.data(), bytes.data(), out.size() * sizeof(double));
  return out;
}

std::vector<std::int32_t> Array::as_int32() const {
  if (dtype != "<i4") throw ArgumentError("expected int32 array, found " + dtype);
  std::vector<std::int32_t> out(count());
  std::memcpy(out.data(), bytes.data(), out.size() * sizeof(std::int32_t));
  return out;
}

void write(const std::filesystem::path& path, std::span<const double> values,
           std::vector<std::size_t> shape) {
  if (product(shape) != values.size()) throw ShapeError("npy shape does not match data");
  write_raw(path, reinterpret_cast<const char*>(values.data()),
            values.size() * sizeof(double), "<f8", shape);
}

void write(const std::filesystem::path& path, std::span<const std::int32_t> values,
           std::vector<std::size_t> shape) {
  if (product(shape) != values.size()) throw ShapeError("npy shape does not match data");
  write_raw(path, reinterpret_cast<const char*>(values.data()),
            values.size() * sizeof(std::int32_t), "<i4", shape);
}

Array read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "file not found or unreadable");

  char magic[kMagicLen];
  char version[2];
  std::uint16_t hlen = 0;
  in.read(magic, kMagicLen);
  in.read(version, 2);
  in.read(reinterpret_cast<char*>(&hlen), 2);
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw IoError(path.string(), "corrupt header: bad magic");
  }
  if (version[0] != 1) throw IoError(path.string(), "unsupported npy version");

  std::string header(hlen, '\0');
  in.read(header.data(), hlen);
  if (!in) throw IoError(path.string(), "corrupt header: truncated");

  static const std::regex descr_re(R"('descr':\s*'([^']+)')");
  static const std::regex order_re(R"('fortran_order':\s*(True|False))");
  static const std::regex shape_re(R"('shape':\s*\(([^)]*)\))");
  std::smatch m;
  Array arr;
  if (!std::regex_search(header, m, descr_re)) {
    throw IoError(path.string(), "corrupt header: no descr");
  }
  arr.dtype = m[1];
  if (item_size(arr.dtype) == 0) {
    throw IoError(path.string(), "unsupported dtype " + arr.dtype);
  }
  if (!std::regex_search(header, m, order_re) || m[1] == "True") {
    throw IoError(path.string(), "corrupt header: only C order supported");
  }
  if (!std::regex_search(header, m, shape_re)) {
    throw IoError(path.string(), "corrupt header: no shape");
  }
  const std::string dims = m[1];
  static const std::regex num_re(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), num_re);
       it != std::sregex_iterator(); ++it) {
    arr.shape.push_back(std::stoull(it->str()));
  }

  const std::size_t nbytes = arr.count() * item_size(arr.dtype);
  arr.bytes.resize(nbytes);
  in.read(arr.bytes.data(), static_cast<std::streamsize>(nbytes));
  if (static_cast<std::size_t>(in.gcount()) != nbytes) {
    throw IoError(path.string(), "corrupt file: payload truncated (expected " +
                                     std::to_string(nbytes) + " bytes, got " +
                                     std::to_string(in.gcount()) + ")");
  }
  return arr;
}

}  // namespace trajtta::npy
