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

#include "trajtta/modulation.hpp"

#include <cmath>
#include <set>

#include "trajtta/errors.hpp"

namespace trajtta {

std::size_t NormRegistry::total_channels() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += static_cast<std::size_t>(e.channels);
  return n;
}

void NormRegistry::validate() const {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.channels <= 0) throw ConfigError("norm layer " + e.layer_id + " has no channels");
    if (!seen.insert(e.layer_id).second) {
      throw ConfigError("duplicate norm layer id " + e.layer_id);
    }
  }
}

nlohmann::json NormRegistry::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& e : entries) arr.push_back({{"layer_id", e.layer_id}, {"channels", e.channels}});
  return arr;
}

NormRegistry NormRegistry::from_json(const nlohmann::json& j) {
  NormRegistry reg;
  for (const auto& item : j) {
    reg.entries.push_back({item.at("layer_id").get<std::string>(), item.at("channels").get<int>()});
  }
  reg.validate();
  return reg;
}

bool ModulationSet::is_identity() const {
  for (const auto& l : layers) {
    for (double g : l.gamma) {
      if (g != 0.0) return false;
    }
    for (double b : l.beta) {
      if (b != 0.0) return false;
    }
  }
  return true;
}

void ModulationSet::check_against(const NormRegistry& registry) const {
  if (layers.size() != registry.size()) {
    throw ShapeError("modulation covers " + std::to_string(layers.size()) +
                     " layers, registry has " + std::to_string(registry.size()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& e = registry.entries[i];
    const auto& l = layers[i];
    if (l.layer_id != e.layer_id) {
      throw ShapeError("modulation layer '" + l.layer_id + "' where registry expects '" +
                       e.layer_id + "'");
    }
    const auto c = static_cast<std::size_t>(e.channels);
    if (l.gamma.size() != c || l.beta.size() != c) {
      throw ShapeError("modulation for " + l.layer_id + " has wrong channel count");
    }
  }
}

ModulationSet identity_modulation(const NormRegistry& registry) {
  ModulationSet set;
  for (const auto& e : registry.entries) {
    const auto c = static_cast<std::size_t>(e.channels);
    set.layers.push_back({e.layer_id, std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)});
  }
  return set;
}

nn::Tensor apply_modulation(const nn::Tensor& x, std::span<const double> gamma,
                            std::span<const double> beta) {
  const auto c = static_cast<std::size_t>(x.c);
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError("modulation has " + std::to_string(gamma.size()) + "/" +
                     std::to_string(beta.size()) + " channels, activation has " +
                     std::to_string(x.c));
  }
  nn::Tensor out(x.n, x.c, x.h, x.w);
  for (int i = 0; i < x.n; ++i) {
    for (int ch = 0; ch < x.c; ++ch) {
      const double s = std::exp(gamma[static_cast<std::size_t>(ch)]);
      const double b = beta[static_cast<std::size_t>(ch)];
      const double* p = x.channel(i, ch);
      double* q = out.channel(i, ch);
      for (std::size_t k = 0; k < x.plane(); ++k) q[k] = s * p[k] + b;
    }
  }
  return out;
}

}  // namespace trajtta
