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

#include "trajtta/archive.hpp"

#include <cstring>
#include <fstream>

#include "trajtta/errors.hpp"

namespace trajtta {

namespace {
constexpr char kMagic[8] = {'T', 'R', 'J', 'T', 'T', 'A', '0', '1'};
}

const std::vector<double>& Archive::blob(const std::string& name) const {
  for (const auto& [key, values] : blobs) {
    if (key == name) return values;
  }
  throw ArgumentError("archive has no blob named '" + name + "'");
}

void write_archive(const std::filesystem::path& path, const nlohmann::json& header,
                   const std::vector<std::pair<std::string, std::span<const double>>>& blobs) {
  nlohmann::json full = header;
  full["blobs"] = nlohmann::json::array();
  for (const auto& [name, values] : blobs) {
    full["blobs"].push_back({{"name", name}, {"count", values.size()}});
  }
  const std::string text = full.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, values] : blobs) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!out) throw IoError(path.string(), "write failed");
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "file not found or unreadable");
  char magic[sizeof(kMagic)];
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path.string(), "corrupt header: bad magic");
  }
  if (len > (1u << 26)) throw IoError(path.string(), "corrupt header: implausible length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path.string(), "corrupt header: truncated");

  Archive ar;
  try {
    ar.header = nlohmann::json::parse(text);
    for (const auto& b : ar.header.at("blobs")) {
      std::vector<double> values(b.at("count").get<std::size_t>());
      in.read(reinterpret_cast<char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
      if (!in) throw IoError(path.string(), "corrupt file: blob payload truncated");
      ar.blobs.emplace_back(b.at("name").get<std::string>(), std::move(values));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string(), std::string("corrupt header: ") + e.what());
  }
  return ar;
}

std::uint64_t fnv1a64(std::span<const double> values, std::uint64_t seed) {
  std::uint64_t h = seed;
  const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
  for (std::size_t i = 0; i < values.size_bytes(); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t value, int digits) {
  static const char* kDigits = "0123456789abcdef";
  std::string out(static_cast<std::size_t>(digits), '0');
  for (int i = digits - 1; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xf];
    value >>= 4;
  }
  return out;
}

}  // namespace trajtta
