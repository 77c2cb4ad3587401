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

#include <json.hpp>

#include "trajtta/modulation.hpp"

namespace trajtta {

// [sin(t w_0), ..., sin(t w_{h-1}), cos(t w_0), ..., cos(t w_{h-1})] with
// h = dim / 2 and w_k = max_period^(-2k / dim). Throws ConfigError for odd
// or non-positive dim.
std::vector<double> sinusoidal_embedding(double t, int dim, double max_period);

struct ModulatorConfig {
  int emb_dim = 16;
  int hidden_dim = 64;
  double max_period = 10.0;
  double gamma_clamp = 10.0;
  // Feed t / T instead of raw t to the embedding.
  bool normalize_time = true;

  void validate() const;
  nlohmann::json to_json() const;
  static ModulatorConfig from_json(const nlohmann::json& j);

  bool operator==(const ModulatorConfig&) const = default;
};

// Time-conditioned network: sinusoidal embedding -> Linear -> Swish ->
// Linear -> Swish, then one linear head per registry entry emitting
// [gamma (channels), beta (channels)]. Heads start at exactly zero, so a
// fresh modulator yields the identity modulation for every t.
class Modulator {
 public:
  struct Cache {
    std::vector<double> embedding;
    std::vector<double> pre1;
    std::vector<double> hidden1;
    std::vector<double> pre2;
    std::vector<double> hidden2;
    std::vector<std::vector<bool>> clamped;  // per layer, per channel
  };

  // Trunk drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with `seed`.
  // Throws ConfigError for an empty registry.
  static Modulator init(const NormRegistry& registry, const ModulatorConfig& config,
                        std::uint64_t seed);

  const NormRegistry& registry() const { return registry_; }
  const ModulatorConfig& config() const { return config_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t num_params() const { return params_.size(); }

  std::span<double> head_weight(std::size_t layer);
  std::span<double> head_bias(std::size_t layer);

  // Pure in (params, t). |gamma| is clamped to config.gamma_clamp; the
  // number of clamped entries is added to *clamp_events when given.
  ModulationSet forward(double t, double horizon, Cache* cache = nullptr,
                        int* clamp_events = nullptr) const;

  // Accumulates dL/dparams given dL/dgamma and dL/dbeta (shaped like the
  // registry). Clamped gamma entries pass no gradient.
  void backward(const Cache& cache, const ModulationSet& dmod, std::span<double> dparams) const;

  bool operator==(const Modulator&) const = default;

 private:
  Modulator() = default;
  void layout();

  NormRegistry registry_;
  ModulatorConfig config_;
  std::vector<double> params_;
  std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0;
  std::vector<std::size_t> head_w_;
  std::vector<std::size_t> head_b_;
};

void save_modulator(const std::filesystem::path& path, const Modulator& modulator);
// Throws ConfigError when the stored registry differs from `expected`.
Modulator load_modulator(const std::filesystem::path& path, const NormRegistry& expected);

}  // namespace trajtta
