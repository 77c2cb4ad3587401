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
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "trajtta/backbone.hpp"
#include "trajtta/modulator.hpp"
#include "trajtta/recon.hpp"

namespace trajtta {

enum class Granularity { kPerCase, kPerDataset };
enum class TrajectorySubset { kFull, kOnlyLast, kWithoutFirst };
enum class LossReduction { kMeanOverS, kSumOverS };

Granularity parse_granularity(const std::string& name);
TrajectorySubset parse_subset(const std::string& name);
LossReduction parse_reduction(const std::string& name);
std::string to_string(Granularity g);
std::string to_string(TrajectorySubset s);
std::string to_string(LossReduction r);

struct AdaptConfig {
  int steps = 100;
  double lr = 1e-5;
  Granularity granularity = Granularity::kPerDataset;
  TrajectorySubset subset = TrajectorySubset::kFull;
  LossReduction reduction = LossReduction::kMeanOverS;
  std::uint64_t seed = 0;
  // Worker threads for per-case adaptation; results do not depend on it.
  int jobs = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

struct AdaptReport {
  std::string scope;  // case id, or "dataset"
  std::vector<std::pair<int, double>> loss_curve;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int steps_run = 0;
  int clamp_events = 0;

  nlohmann::json to_json() const;
};

// One adapted modulator per case (per_case) or a single shared one.
struct AdaptResult {
  std::vector<Modulator> modulators;
  std::vector<AdaptReport> reports;

  // Modulator to use for trajectory `index`.
  const Modulator& for_case(std::size_t index) const;
};

// Mean over pixels of -sum_c p log p per map, combined by mean or sum over
// the list. Throws ArgumentError for an empty list or mismatched maps.
double entropy_loss(std::span<const ProbMap> maps, LossReduction reduction);

// Trajectory indices used by a subset mode for a trajectory of length S.
std::vector<std::size_t> select_steps(std::size_t length, TrajectorySubset subset);

// Loss of one trajectory under the modulated backbone. Cross-entropy
// against `labels` when given, entropy otherwise. Accumulates dL/dparams
// into `grad` when it is non-empty.
double trajectory_objective(const Backbone& backbone, const Modulator& modulator,
                            const Trajectory& trajectory, TrajectorySubset subset,
                            LossReduction reduction, const SegmentationMask* labels,
                            std::span<double> grad, int* clamp_events = nullptr);

// Adam over the modulator parameters only; the backbone is read-only.
// Throws TrainingError with the step index on a non-finite loss.
AdaptResult adapt(const Backbone& backbone, const Modulator& initial,
                  std::span<const Trajectory> trajectories, const AdaptConfig& cfg);

// Same loop with per-pixel cross-entropy against `labels` (one per case).
AdaptResult supervised_adapt(const Backbone& backbone, const Modulator& initial,
                             std::span<const Trajectory> trajectories,
                             std::span<const SegmentationMask> labels, const AdaptConfig& cfg);

// Class probabilities for every trajectory image; no modulation when
// `modulator` is null.
std::vector<ProbMap> predict_trajectory(const Backbone& backbone, const Modulator* modulator,
                                        const Trajectory& trajectory);

}  // namespace trajtta
