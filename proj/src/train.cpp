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

#include "trajtta/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "trajtta/adam.hpp"
#include "trajtta/errors.hpp"
#include "trajtta/losses.hpp"

namespace trajtta {

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (lr < 0.0 || final_lr < 0.0) throw ConfigError("learning rates must be >= 0");
  if (max_shift < 0 || contrast < 0.0 || noise < 0.0) {
    throw ConfigError("augmentation magnitudes must be >= 0");
  }
  if (!(foreground_weight > 0.0)) throw ConfigError("foreground weight must be positive");
}

void augment_pair(Image& image, SegmentationMask& mask, const TrainConfig& cfg,
                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int h = image.height;
  const int w = image.width;

  const bool flip = unit(rng) < 0.5;
  const int dy = cfg.max_shift > 0
                     ? std::uniform_int_distribution<int>(-cfg.max_shift, cfg.max_shift)(rng)
                     : 0;
  const int dx = cfg.max_shift > 0
                     ? std::uniform_int_distribution<int>(-cfg.max_shift, cfg.max_shift)(rng)
                     : 0;
  const Image src = image;
  const SegmentationMask src_mask = mask;
  for (int y = 0; y < h; ++y) {
    const int sy = std::clamp(y - dy, 0, h - 1);
    for (int x = 0; x < w; ++x) {
      int sx = std::clamp(x - dx, 0, w - 1);
      if (flip) sx = w - 1 - sx;
      image.at(y, x) = src.at(sy, sx);
      mask.at(y, x) = src_mask.at(sy, sx);
    }
  }

  const double gain = 1.0 + cfg.contrast * (2.0 * unit(rng) - 1.0);
  const double offset = 0.5 * cfg.contrast * (2.0 * unit(rng) - 1.0);
  const double sigma = cfg.noise * unit(rng);
  for (auto& v : image.data) v = gain * (v - 0.5) + 0.5 + offset + sigma * normal(rng);
}

TrainReport train_backbone(Backbone& net, std::span<const Image> images,
                           std::span<const SegmentationMask> masks, const TrainConfig& cfg) {
  cfg.validate();
  if (images.empty()) throw TrainingError(0, "empty training dataset");
  if (images.size() != masks.size()) throw ShapeError("images and masks differ in count");

  const int n_cls = net.arch().num_classes;
  std::vector<double> class_weights(static_cast<std::size_t>(n_cls), cfg.foreground_weight);
  class_weights[0] = 1.0;

  Adam adam(net.num_parameters(), AdamConfig{.lr = cfg.lr});
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
  std::vector<double> grad(net.num_parameters());
  const double floor_lr = std::min(cfg.final_lr, cfg.lr);

  TrainReport report;
  const std::size_t hw = static_cast<std::size_t>(net.arch().height) * net.arch().width;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Image> batch;
    std::vector<std::int32_t> labels;
    labels.reserve(hw * static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t idx = pick(rng);
      Image img = images[idx];
      SegmentationMask m = masks[idx];
      if (cfg.augment) augment_pair(img, m, cfg, rng());
      labels.insert(labels.end(), m.labels.begin(), m.labels.end());
      batch.push_back(std::move(img));
    }

    Backbone::Cache cache;
    const nn::Tensor logits = net.train_forward(net.batch_tensor(batch), cache);
    nn::Tensor dlogits;
    const double inv_batch = 1.0 / cfg.batch_size;
    const double loss =
        pixel_cross_entropy(logits, labels, class_weights, &dlogits, inv_batch) * inv_batch;
    if (!std::isfinite(loss)) throw TrainingError(step, "non-finite loss");

    std::fill(grad.begin(), grad.end(), 0.0);
    net.backward(cache, dlogits, grad, nullptr);
    const double progress = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 1.0;
    const double lr =
        floor_lr + 0.5 * (cfg.lr - floor_lr) * (1.0 + std::cos(std::numbers::pi * progress));
    adam.step(net.mutable_theta(), grad, lr);

    report.loss_curve.emplace_back(step, loss);
    report.final_loss = loss;
  }
  net.freeze();
  return report;
}

}  // namespace trajtta
