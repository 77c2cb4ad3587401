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
#include <span>
#include <utility>
#include <vector>

#include "trajtta/backbone.hpp"
#include "trajtta/image.hpp"

namespace trajtta {

struct TrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double lr = 1e-3;
  // Cosine annealing target; capped at lr so that lr = 0 freezes theta.
  double final_lr = 1e-6;
  std::uint64_t seed = 0;
  bool augment = true;
  int max_shift = 4;
  double contrast = 0.1;
  double noise = 0.03;
  // Weight of every foreground class relative to background in the loss.
  double foreground_weight = 2.0;

  void validate() const;
};

struct TrainReport {
  std::vector<std::pair<int, double>> loss_curve;
  double final_loss = 0.0;
};

// Minimal augmentation: horizontal flip, integer shift with edge
// replication, contrast/offset jitter and additive Gaussian noise.
void augment_pair(Image& image, SegmentationMask& mask, const TrainConfig& cfg,
                  std::uint64_t seed);

// Trains in place with Adam and cosine annealing, then freezes the weights.
// Throws TrainingError for an empty dataset or a non-finite loss.
TrainReport train_backbone(Backbone& net, std::span<const Image> images,
                           std::span<const SegmentationMask> masks, const TrainConfig& cfg);

}  // namespace trajtta
