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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "trajtta/backbone.hpp"
#include "trajtta/image.hpp"
#include "trajtta/recon.hpp"

namespace trajtta::testing {

// Hand-rolled generators for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return uniform() < p; }

  Image image(int h, int w, double sd = 1.0) {
    Image img(h, w);
    for (double& v : img.data) v = normal(sd);
    return img;
  }

  // Random point on the probability simplex; with `sparse` some entries are
  // exactly zero.
  std::vector<double> simplex(int c, bool sparse = false) {
    std::vector<double> p(static_cast<std::size_t>(c));
    double sum = 0.0;
    for (double& v : p) {
      v = sparse && coin(0.3) ? 0.0 : -std::log(uniform(1e-12, 1.0));
      sum += v;
    }
    if (sum == 0.0) {
      p[static_cast<std::size_t>(integer(0, c - 1))] = 1.0;
      return p;
    }
    for (double& v : p) v /= sum;
    return p;
  }

  ProbMap prob_map(int pixels, int c, double scale = 2.0) {
    std::vector<double> logits(static_cast<std::size_t>(pixels) * c);
    for (double& v : logits) v = normal(scale);
    return ProbMap::from_logits(pixels, c, std::move(logits));
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// 2-norm-layer backbone on 8x8 inputs used for gradient checks.
inline ArchConfig tiny_arch(int classes = 3) {
  ArchConfig a;
  a.height = 8;
  a.width = 8;
  a.num_classes = classes;
  a.base_width = 3;
  a.depth = 1;
  return a;
}

// Running statistics away from the (0, 1) defaults so evaluation-mode
// normalization is exercised.
inline Backbone randomized_backbone(const ArchConfig& arch, std::uint64_t seed) {
  Backbone net = Backbone::build(arch, seed);
  BackboneWeights w = net.weights();
  Gen g(seed + 17);
  for (double& v : w.running_mean) v = g.normal(0.3);
  for (double& v : w.running_var) v = g.uniform(0.5, 2.0);
  for (std::size_t i = 0; i < w.theta.size(); ++i) w.theta[i] += g.normal(0.05);
  w.frozen = true;
  return Backbone::from_weights(arch, std::move(w));
}

inline Trajectory random_trajectory(Gen& g, int steps, int h, int w, const std::string& id) {
  Trajectory t;
  t.case_id = id;
  t.horizon = 1.0;
  const TimeSchedule s = make_schedule(steps, 1.0);
  for (int i = 0; i < steps; ++i) {
    t.steps.push_back({g.image(h, w, 1.0), s.times[static_cast<std::size_t>(i)]});
  }
  return t;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("trajtta_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace trajtta::testing
