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
#include <vector>

#include "trajtta/backbone.hpp"

namespace trajtta {

struct EnsembleResult {
  int pixels = 0;
  int num_classes = 0;
  std::vector<double> mean_probs;      // pixel-major, pixels x C
  std::vector<std::int32_t> label_map;  // argmax, lowest index on ties
  std::vector<double> entropy;          // natural log, in [0, ln C]
};

// Arithmetic mean of the maps' probabilities. Throws ArgumentError for an
// empty list or inconsistent shapes.
std::vector<double> ensemble_mean(std::span<const ProbMap> maps);

// Per-row -sum p log p with 0 log 0 = 0. Throws ArgumentError on negative
// entries or a length that is not a multiple of C.
std::vector<double> entropy_map(std::span<const double> probs, int num_classes);

EnsembleResult finalize(std::span<const ProbMap> maps);

// Affine rescale to [0, 1]; constant input maps to zeros.
std::vector<double> minmax_normalize(std::span<const double> values);

// Binary 8-bit grayscale PGM of values clamped to [0, 1].
void write_pgm(const std::filesystem::path& path, std::span<const double> values, int height,
               int width);

// label_map.npy, entropy.npy, mean_probs.npy plus renderings
// label_map.pgm, entropy.pgm (raw / ln C) and entropy_norm.pgm (min-max).
void save_ensemble(const std::filesystem::path& dir, const EnsembleResult& result, int height,
                   int width);

}  // namespace trajtta
