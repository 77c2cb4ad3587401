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

#include "trajtta/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "trajtta/errors.hpp"
#include "trajtta/npy.hpp"

namespace trajtta {

std::vector<double> ensemble_mean(std::span<const ProbMap> maps) {
  if (maps.empty()) throw ArgumentError("ensemble_mean needs at least one probability map");
  const auto& first = maps.front();
  std::vector<double> mean(first.probs.size(), 0.0);
  for (const auto& m : maps) {
    if (m.pixels != first.pixels || m.num_classes != first.num_classes ||
        m.probs.size() != mean.size()) {
      throw ArgumentError("ensemble members differ in shape");
    }
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += m.probs[k];
  }
  const double inv = 1.0 / static_cast<double>(maps.size());
  for (double& v : mean) v *= inv;
  return mean;
}

std::vector<double> entropy_map(std::span<const double> probs, int num_classes) {
  if (num_classes < 1 || probs.size() % static_cast<std::size_t>(num_classes) != 0) {
    throw ArgumentError("probability array is not a whole number of rows");
  }
  const auto c = static_cast<std::size_t>(num_classes);
  std::vector<double> h(probs.size() / c, 0.0);
  const double ln_c = std::log(static_cast<double>(num_classes));
  for (std::size_t p = 0; p < h.size(); ++p) {
    double acc = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double v = probs[p * c + k];
      if (v < 0.0 || !std::isfinite(v)) {
        throw ArgumentError("invalid probability " + std::to_string(v) + " at pixel " +
                            std::to_string(p));
      }
      if (v > 0.0) acc -= v * std::log(v);
    }
    h[p] = std::clamp(acc, 0.0, ln_c);
  }
  return h;
}

EnsembleResult finalize(std::span<const ProbMap> maps) {
  EnsembleResult r;
  r.mean_probs = ensemble_mean(maps);
  r.pixels = maps.front().pixels;
  r.num_classes = maps.front().num_classes;
  r.label_map = argmax_rows(r.mean_probs, r.num_classes);
  r.entropy = entropy_map(r.mean_probs, r.num_classes);
  return r;
}

std::vector<double> minmax_normalize(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t k = 0; k < values.size(); ++k) out[k] = (values[k] - *lo) / range;
  return out;
}

void write_pgm(const std::filesystem::path& path, std::span<const double> values, int height,
               int width) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("image buffer does not match " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  for (const double v : values) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  if (!out) throw IoError(path.string(), "write failed");
}

void save_ensemble(const std::filesystem::path& dir, const EnsembleResult& result, int height,
                   int width) {
  if (static_cast<long>(result.pixels) != static_cast<long>(height) * width) {
    throw ShapeError("ensemble result does not match the image size");
  }
  std::filesystem::create_directories(dir);
  const std::vector<std::size_t> shape2{static_cast<std::size_t>(height),
                                        static_cast<std::size_t>(width)};
  npy::write(dir / "label_map.npy", std::span<const std::int32_t>(result.label_map), shape2);
  npy::write(dir / "entropy.npy", std::span<const double>(result.entropy), shape2);
  npy::write(dir / "mean_probs.npy", std::span<const double>(result.mean_probs),
             {shape2[0], shape2[1], static_cast<std::size_t>(result.num_classes)});

  std::vector<double> labels(result.label_map.size());
  const double top = std::max(1, result.num_classes - 1);
  for (std::size_t k = 0; k < labels.size(); ++k) labels[k] = result.label_map[k] / top;
  write_pgm(dir / "label_map.pgm", labels, height, width);

  std::vector<double> scaled(result.entropy.size());
  const double ln_c = std::log(static_cast<double>(std::max(2, result.num_classes)));
  for (std::size_t k = 0; k < scaled.size(); ++k) scaled[k] = result.entropy[k] / ln_c;
  write_pgm(dir / "entropy.pgm", scaled, height, width);
  write_pgm(dir / "entropy_norm.pgm", minmax_normalize(result.entropy), height, width);
}

}  // namespace trajtta
