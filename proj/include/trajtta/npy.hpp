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

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace trajtta::npy {

// Minimal reader/writer for NumPy .npy (format version 1.0), little-endian,
// C order. Supports float64 ("<f8") and int32 ("<i4") payloads.
struct Array {
  std::vector<std::size_t> shape;
  std::string dtype;
  std::vector<char> bytes;

  std::size_t count() const;
  std::vector<double> as_double() const;
  std::vector<std::int32_t> as_int32() const;
};

void write(const std::filesystem::path& path, std::span<const double> values,
           std::vector<std::size_t> shape);
void write(const std::filesystem::path& path, std::span<const std::int32_t> values,
           std::vector<std::size_t> shape);

// Throws IoError naming the path for missing, truncated or malformed files.
Array read(const std::filesystem::path& path);

}  // namespace trajtta::npy
