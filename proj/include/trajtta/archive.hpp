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

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace trajtta {

// Single-file container: magic, JSON header, then named float64 blobs in
// header order. Used for backbone and modulator checkpoints.
struct Archive {
  nlohmann::json header;
  std::vector<std::pair<std::string, std::vector<double>>> blobs;

  const std::vector<double>& blob(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const nlohmann::json& header,
                   const std::vector<std::pair<std::string, std::span<const double>>>& blobs);
Archive read_archive(const std::filesystem::path& path);

// FNV-1a over the raw bytes.
std::uint64_t fnv1a64(std::span<const double> values, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const std::string& text);
std::string to_hex(std::uint64_t value, int digits = 16);

}  // namespace trajtta
