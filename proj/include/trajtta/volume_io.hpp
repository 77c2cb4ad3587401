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
#include <string>
#include <vector>

#include "trajtta/image.hpp"

namespace trajtta {

// Layered OCT-like phantom: wavy horizontal bands plus elliptical lesions,
// one intensity signature per foreground class.
struct PhantomConfig {
  int height = 64;
  int width = 64;
  int num_classes = 4;
  int min_bands = 4;
  int max_bands = 6;
  int min_lesions = 1;  // per foreground class, when the class is present
  int max_lesions = 2;
  double min_radius = 3.0;
  double max_radius = 8.0;
  // Probability that a given foreground class has no lesion in a case.
  double absent_probability = 0.25;
  bool force_empty = false;
  double speckle = 0.02;
  double measurement_noise = 0.02;
  std::string operator_id = "identity";

  void validate() const;
};

// Target-domain intensity remap applied to measurements:
// m' = gain * max(m, 0)^gamma + offset + N(0, noise^2).
struct ShiftConfig {
  double gamma = 1.0;
  double gain = 1.0;
  double offset = 0.0;
  double noise = 0.0;

  bool is_identity() const { return gamma == 1.0 && gain == 1.0 && offset == 0.0 && noise == 0.0; }
  void validate() const;
};

struct SyntheticCase {
  std::string case_id;
  Image clean;
  SegmentationMask mask;
  Measurement measurement;
  std::uint64_t seed = 0;

  bool operator==(const SyntheticCase&) const = default;
};

// Pure function of (seed, config).
SyntheticCase generate_synthetic_case(std::uint64_t seed, const PhantomConfig& config,
                                      const std::string& case_id = "");

// Returns the shifted measurement; the noise draw is seeded by `seed`.
Measurement apply_domain_shift(const Measurement& m, const ShiftConfig& shift,
                               std::uint64_t seed);

// Case directory layout: clean.npy, mask.npy, measurement.npy, manifest.json.
void save_case(const std::filesystem::path& dir, const SyntheticCase& c);
SyntheticCase load_case(const std::filesystem::path& dir);

// Case directories directly below `root`, sorted by name.
std::vector<std::filesystem::path> list_case_dirs(const std::filesystem::path& root,
                                                  const std::string& prefix = "");

}  // namespace trajtta
