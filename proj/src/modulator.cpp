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

#include "trajtta/modulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "trajtta/archive.hpp"
#include "trajtta/errors.hpp"

namespace trajtta {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double swish(double x) { return x * sigmoid(x); }
double swish_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

// out = W x + b with W stored row-major [rows][cols].
void affine(const double* w, const double* b, const std::vector<double>& x, std::size_t rows,
            std::vector<double>& out) {
  const std::size_t cols = x.size();
  out.assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = b[r];
    const double* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
}

}  // namespace

std::vector<double> sinusoidal_embedding(double t, int dim, double max_period) {
  if (dim < 2 || dim % 2 != 0) {
    throw ConfigError("embedding dim must be even and >= 2, got " + std::to_string(dim));
  }
  if (!(max_period > 0.0)) throw ConfigError("embedding max_period must be positive");
  const int half = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int k = 0; k < half; ++k) {
    const double freq = std::pow(max_period, -2.0 * k / dim);
    out[static_cast<std::size_t>(k)] = std::sin(t * freq);
    out[static_cast<std::size_t>(k + half)] = std::cos(t * freq);
  }
  return out;
}

void ModulatorConfig::validate() const {
  if (emb_dim < 2 || emb_dim % 2 != 0) {
    throw ConfigError("embedding dim must be even and >= 2, got " + std::to_string(emb_dim));
  }
  if (hidden_dim < 1) throw ConfigError("modulator hidden dim must be >= 1");
  if (!(max_period > 0.0)) throw ConfigError("embedding max_period must be positive");
  if (!(gamma_clamp > 0.0)) throw ConfigError("gamma clamp must be positive");
}

nlohmann::json ModulatorConfig::to_json() const {
  return {{"emb_dim", emb_dim},
          {"hidden_dim", hidden_dim},
          {"max_period", max_period},
          {"gamma_clamp", gamma_clamp},
          {"normalize_time", normalize_time}};
}

ModulatorConfig ModulatorConfig::from_json(const nlohmann::json& j) {
  ModulatorConfig c;
  c.emb_dim = j.at("emb_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.max_period = j.at("max_period").get<double>();
  c.gamma_clamp = j.at("gamma_clamp").get<double>();
  c.normalize_time = j.at("normalize_time").get<bool>();
  c.validate();
  return c;
}

void Modulator::layout() {
  const auto e = static_cast<std::size_t>(config_.emb_dim);
  const auto h = static_cast<std::size_t>(config_.hidden_dim);
  std::size_t off = 0;
  w1_ = off;
  off += h * e;
  b1_ = off;
  off += h;
  w2_ = off;
  off += h * h;
  b2_ = off;
  off += h;
  head_w_.clear();
  head_b_.clear();
  for (const auto& entry : registry_.entries) {
    const auto out = 2 * static_cast<std::size_t>(entry.channels);
    head_w_.push_back(off);
    off += out * h;
    head_b_.push_back(off);
    off += out;
  }
  params_.assign(off, 0.0);
}

Modulator Modulator::init(const NormRegistry& registry, const ModulatorConfig& config,
                          std::uint64_t seed) {
  config.validate();
  registry.validate();
  if (registry.entries.empty()) throw ConfigError("modulator needs a non-empty norm registry");
  Modulator m;
  m.registry_ = registry;
  m.config_ = config;
  m.layout();

  std::mt19937_64 rng(seed);
  auto fill = [&](std::size_t off, std::size_t count, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t k = 0; k < count; ++k) m.params_[off + k] = dist(rng);
  };
  const auto e = static_cast<std::size_t>(config.emb_dim);
  const auto h = static_cast<std::size_t>(config.hidden_dim);
  fill(m.w1_, h * e, e);
  fill(m.b1_, h, e);
  fill(m.w2_, h * h, h);
  fill(m.b2_, h, h);
  // Output heads stay exactly zero.
  return m;
}

std::span<double> Modulator::head_weight(std::size_t layer) {
  const auto out = 2 * static_cast<std::size_t>(registry_.entries.at(layer).channels);
  return std::span<double>(params_).subspan(head_w_[layer],
                                            out * static_cast<std::size_t>(config_.hidden_dim));
}

std::span<double> Modulator::head_bias(std::size_t layer) {
  const auto out = 2 * static_cast<std::size_t>(registry_.entries.at(layer).channels);
  return std::span<double>(params_).subspan(head_b_[layer], out);
}

ModulationSet Modulator::forward(double t, double horizon, Cache* cache, int* clamp_events) const {
  if (!std::isfinite(t)) throw DomainError("modulator time must be finite");
  if (config_.normalize_time && !(horizon > 0.0)) {
    throw DomainError("modulator horizon must be positive");
  }
  Cache local;
  Cache& c = cache != nullptr ? *cache : local;
  const auto h = static_cast<std::size_t>(config_.hidden_dim);
  const double tau = config_.normalize_time ? t / horizon : t;

  c.embedding = sinusoidal_embedding(tau, config_.emb_dim, config_.max_period);
  affine(params_.data() + w1_, params_.data() + b1_, c.embedding, h, c.pre1);
  c.hidden1.resize(h);
  std::transform(c.pre1.begin(), c.pre1.end(), c.hidden1.begin(), swish);
  affine(params_.data() + w2_, params_.data() + b2_, c.hidden1, h, c.pre2);
  c.hidden2.resize(h);
  std::transform(c.pre2.begin(), c.pre2.end(), c.hidden2.begin(), swish);

  ModulationSet set;
  c.clamped.assign(registry_.size(), {});
  std::vector<double> out;
  for (std::size_t l = 0; l < registry_.size(); ++l) {
    const auto ch = static_cast<std::size_t>(registry_.entries[l].channels);
    affine(params_.data() + head_w_[l], params_.data() + head_b_[l], c.hidden2, 2 * ch, out);
    LayerModulation lm;
    lm.layer_id = registry_.entries[l].layer_id;
    lm.gamma.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(ch));
    lm.beta.assign(out.begin() + static_cast<std::ptrdiff_t>(ch), out.end());
    c.clamped[l].assign(ch, false);
    for (std::size_t k = 0; k < ch; ++k) {
      if (std::abs(lm.gamma[k]) > config_.gamma_clamp) {
        lm.gamma[k] = std::copysign(config_.gamma_clamp, lm.gamma[k]);
        c.clamped[l][k] = true;
        if (clamp_events != nullptr) ++*clamp_events;
      }
    }
    set.layers.push_back(std::move(lm));
  }
  return set;
}

void Modulator::backward(const Cache& cache, const ModulationSet& dmod,
                         std::span<double> dparams) const {
  if (dparams.size() != params_.size()) throw ShapeError("dparams has the wrong size");
  dmod.check_against(registry_);
  const auto h = static_cast<std::size_t>(config_.hidden_dim);
  const auto e = static_cast<std::size_t>(config_.emb_dim);

  std::vector<double> dh2(h, 0.0);
  std::vector<double> dout;
  for (std::size_t l = 0; l < registry_.size(); ++l) {
    const auto ch = static_cast<std::size_t>(registry_.entries[l].channels);
    dout.assign(2 * ch, 0.0);
    for (std::size_t k = 0; k < ch; ++k) {
      dout[k] = cache.clamped[l][k] ? 0.0 : dmod.layers[l].gamma[k];
      dout[ch + k] = dmod.layers[l].beta[k];
    }
    const double* w = params_.data() + head_w_[l];
    double* dw = dparams.data() + head_w_[l];
    double* db = dparams.data() + head_b_[l];
    for (std::size_t r = 0; r < 2 * ch; ++r) {
      const double g = dout[r];
      if (g == 0.0) continue;
      db[r] += g;
      for (std::size_t j = 0; j < h; ++j) {
        dw[r * h + j] += g * cache.hidden2[j];
        dh2[j] += g * w[r * h + j];
      }
    }
  }

  std::vector<double> dpre2(h);
  for (std::size_t j = 0; j < h; ++j) dpre2[j] = dh2[j] * swish_grad(cache.pre2[j]);
  std::vector<double> dh1(h, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    dparams[b2_ + r] += dpre2[r];
    for (std::size_t j = 0; j < h; ++j) {
      dparams[w2_ + r * h + j] += dpre2[r] * cache.hidden1[j];
      dh1[j] += dpre2[r] * params_[w2_ + r * h + j];
    }
  }
  for (std::size_t r = 0; r < h; ++r) {
    const double g = dh1[r] * swish_grad(cache.pre1[r]);
    dparams[b1_ + r] += g;
    for (std::size_t j = 0; j < e; ++j) dparams[w1_ + r * e + j] += g * cache.embedding[j];
  }
}

void save_modulator(const std::filesystem::path& path, const Modulator& modulator) {
  const nlohmann::json header = {{"kind", "modulator"},
                                 {"config", modulator.config().to_json()},
                                 {"registry", modulator.registry().to_json()}};
  write_archive(path, header, {{"params", modulator.params()}});
}

Modulator load_modulator(const std::filesystem::path& path, const NormRegistry& expected) {
  const Archive ar = read_archive(path);
  try {
    if (ar.header.at("kind").get<std::string>() != "modulator") {
      throw IoError(path.string(), "not a modulator checkpoint");
    }
    const NormRegistry stored = NormRegistry::from_json(ar.header.at("registry"));
    if (stored != expected) {
      throw ConfigError(path.string() + ": modulator was built for a different norm registry (" +
                        std::to_string(stored.size()) + " layers vs " +
                        std::to_string(expected.size()) + ")");
    }
    Modulator m = Modulator::init(stored, ModulatorConfig::from_json(ar.header.at("config")), 0);
    const auto& params = ar.blob("params");
    if (params.size() != m.num_params()) {
      throw IoError(path.string(), "parameter count does not match the stored config");
    }
    std::copy(params.begin(), params.end(), m.params().begin());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string(), std::string("corrupt header: ") + e.what());
  }
}

}  // namespace trajtta
