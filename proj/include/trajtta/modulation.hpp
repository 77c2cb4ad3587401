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

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajtta/nn.hpp"

namespace trajtta {

// Normalization layers of a backbone in topological order
// (encoder to decoder). These are the modulation injection points.
struct NormRegistry {
  struct Entry {
    std::string layer_id;
    int channels = 0;

    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t total_channels() const;
  void validate() const;

  nlohmann::json to_json() const;
  static NormRegistry from_json(const nlohmann::json& j);

  bool operator==(const NormRegistry&) const = default;
};

// Per-layer log-scale gamma and shift beta; the effective transform is
// z = exp(gamma) * x + beta per channel.
struct LayerModulation {
  std::string layer_id;
  std::vector<double> gamma;
  std::vector<double> beta;

  bool operator==(const LayerModulation&) const = default;
};

struct ModulationSet {
  std::vector<LayerModulation> layers;

  bool is_identity() const;
  // Throws ShapeError unless layers match the registry one-to-one, in order.
  void check_against(const NormRegistry& registry) const;

  bool operator==(const ModulationSet&) const = default;
};

ModulationSet identity_modulation(const NormRegistry& registry);

// exp(gamma) * x + beta, broadcast over the spatial dimensions.
nn::Tensor apply_modulation(const nn::Tensor& x, std::span<const double> gamma,
                            std::span<const double> beta);

}  // namespace trajtta
