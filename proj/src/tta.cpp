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

#include "trajtta/tta.hpp"

#include <algorithm>
#include <atomic>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <thread>

#include "trajtta/adam.hpp"
#include "trajtta/errors.hpp"
#include "trajtta/losses.hpp"

namespace trajtta {

Granularity parse_granularity(const std::string& name) {
  if (name == "per_case") return Granularity::kPerCase;
  if (name == "per_dataset") return Granularity::kPerDataset;
  throw ConfigError("unknown granularity '" + name + "' (expected per_case or per_dataset)");
}

TrajectorySubset parse_subset(const std::string& name) {
  if (name == "full") return TrajectorySubset::kFull;
  if (name == "only_last") return TrajectorySubset::kOnlyLast;
  if (name == "without_first") return TrajectorySubset::kWithoutFirst;
  throw ConfigError("unknown subset '" + name + "' (expected full, only_last or without_first)");
}

LossReduction parse_reduction(const std::string& name) {
  if (name == "mean_over_S" || name == "mean") return LossReduction::kMeanOverS;
  if (name == "sum_over_S" || name == "sum") return LossReduction::kSumOverS;
  throw ConfigError("unknown loss reduction '" + name + "' (expected mean_over_S or sum_over_S)");
}

std::string to_string(Granularity g) {
  return g == Granularity::kPerCase ? "per_case" : "per_dataset";
}

std::string to_string(TrajectorySubset s) {
  switch (s) {
    case TrajectorySubset::kFull:
      return "full";
    case TrajectorySubset::kOnlyLast:
      return "only_last";
    case TrajectorySubset::kWithoutFirst:
      return "without_first";
  }
  return "full";
}

std::string to_string(LossReduction r) {
  return r == LossReduction::kMeanOverS ? "mean_over_S" : "sum_over_S";
}

void AdaptConfig::validate() const {
  if (steps < 0) throw ConfigError("adaptation steps must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("adaptation lr must be positive");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

nlohmann::json AdaptConfig::to_json() const {
  return {{"steps", steps},
          {"lr", lr},
          {"granularity", to_string(granularity)},
          {"subset", to_string(subset)},
          {"loss_reduction", to_string(reduction)},
          {"seed", seed}};
}

nlohmann::json AdaptReport::to_json() const {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& [step, loss] : loss_curve) curve.push_back({step, loss});
  return {{"scope", scope},
          {"initial_loss", initial_loss},
          {"final_loss", final_loss},
          {"steps_run", steps_run},
          {"clamp_events", clamp_events},
          {"loss_curve", curve}};
}

const Modulator& AdaptResult::for_case(std::size_t index) const {
  if (modulators.empty()) throw ArgumentError("adaptation produced no modulator");
  return modulators.size() == 1 ? modulators.front() : modulators.at(index);
}

double entropy_loss(std::span<const ProbMap> maps, LossReduction reduction) {
  if (maps.empty()) throw ArgumentError("entropy_loss needs at least one probability map");
  const int d = maps.front().pixels;
  const int c = maps.front().num_classes;
  double total = 0.0;
  for (const auto& m : maps) {
    if (m.pixels != d || m.num_classes != c) {
      throw ArgumentError("entropy_loss maps differ in pixel or class count");
    }
    double h = 0.0;
    for (const double p : m.probs) {
      if (p > 0.0) h -= p * std::log(p);
    }
    total += h / d;
  }
  return reduction == LossReduction::kMeanOverS ? total / static_cast<double>(maps.size()) : total;
}

std::vector<std::size_t> select_steps(std::size_t length, TrajectorySubset subset) {
  if (length == 0) throw ArgumentError("empty trajectory");
  std::vector<std::size_t> idx;
  switch (subset) {
    case TrajectorySubset::kFull:
      idx.resize(length);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      break;
    case TrajectorySubset::kOnlyLast:
      idx.push_back(length - 1);
      break;
    case TrajectorySubset::kWithoutFirst:
      // A single-step trajectory keeps its only image.
      for (std::size_t i = length > 1 ? 1 : 0; i < length; ++i) idx.push_back(i);
      break;
  }
  return idx;
}

double trajectory_objective(const Backbone& backbone, const Modulator& modulator,
                            const Trajectory& trajectory, TrajectorySubset subset,
                            LossReduction reduction, const SegmentationMask* labels,
                            std::span<double> grad, int* clamp_events) {
  if (modulator.registry() != backbone.registry()) {
    throw ShapeError("modulator registry does not match the backbone");
  }
  if (!grad.empty() && grad.size() != modulator.num_params()) {
    throw ShapeError("gradient buffer does not match the modulator");
  }
  const auto idx = select_steps(trajectory.steps.size(), subset);
  const double weight =
      reduction == LossReduction::kMeanOverS ? 1.0 / static_cast<double>(idx.size()) : 1.0;
  const bool want_grad = !grad.empty();
  if (labels != nullptr) {
    const Image& first = trajectory.steps.front().image;
    if (labels->height != first.height || labels->width != first.width) {
      throw ShapeError("labels are " + std::to_string(labels->height) + "x" +
                       std::to_string(labels->width) + " but images are " +
                       std::to_string(first.height) + "x" + std::to_string(first.width));
    }
  }

  double loss = 0.0;
  Modulator::Cache mcache;
  Backbone::Cache bcache;
  for (const std::size_t i : idx) {
    const auto& step = trajectory.steps[i];
    const ModulationSet mod =
        modulator.forward(step.time, trajectory.horizon, want_grad ? &mcache : nullptr, clamp_events);
    const nn::Tensor logits =
        backbone.infer(backbone.image_tensor(step.image), &mod, want_grad ? &bcache : nullptr);
    nn::Tensor dlogits;
    const double value =
        labels != nullptr
            ? pixel_cross_entropy(logits, labels->labels, {}, want_grad ? &dlogits : nullptr, weight)
            : pixel_entropy(logits, want_grad ? &dlogits : nullptr, weight);
    loss += weight * value;
    if (want_grad) {
      ModulationSet dmod = identity_modulation(backbone.registry());
      backbone.backward(bcache, dlogits, {}, &dmod);
      modulator.backward(mcache, dmod, grad);
    }
  }
  return loss;
}

namespace {

struct Sample {
  const Trajectory* trajectory;
  const SegmentationMask* labels;
};

double mean_objective(const Backbone& backbone, const Modulator& modulator,
                      std::span<const Sample> samples, const AdaptConfig& cfg) {
  double total = 0.0;
  for (const auto& s : samples) {
    total += trajectory_objective(backbone, modulator, *s.trajectory, cfg.subset, cfg.reduction,
                                  s.labels, {});
  }
  return total / static_cast<double>(samples.size());
}

// Runs cfg.steps Adam iterations. Step k uses samples[order[k % n]], with
// the order reshuffled every pass over the samples.
std::pair<Modulator, AdaptReport> optimize(const Backbone& backbone, const Modulator& initial,
                                           std::span<const Sample> samples,
                                           const AdaptConfig& cfg, std::string scope) {
  Modulator mod = initial;
  AdaptReport report;
  report.scope = std::move(scope);
  report.initial_loss = mean_objective(backbone, mod, samples, cfg);
  if (!std::isfinite(report.initial_loss)) throw TrainingError(0, "non-finite adaptation loss");

  Adam adam(mod.num_params(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  std::vector<double> grad(mod.num_params());
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);

  for (int step = 0; step < cfg.steps; ++step) {
    const auto pos = static_cast<std::size_t>(step) % samples.size();
    if (pos == 0 && samples.size() > 1) std::shuffle(order.begin(), order.end(), rng);
    const Sample& s = samples[order[pos]];
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = trajectory_objective(backbone, mod, *s.trajectory, cfg.subset,
                                             cfg.reduction, s.labels, grad, &report.clamp_events);
    if (!std::isfinite(loss)) throw TrainingError(step, "non-finite adaptation loss");
    report.loss_curve.emplace_back(step, loss);
    adam.step(mod.params(), grad);
  }
  report.steps_run = cfg.steps;
  report.final_loss =
      cfg.steps == 0 ? report.initial_loss : mean_objective(backbone, mod, samples, cfg);
  if (!std::isfinite(report.final_loss)) {
    throw TrainingError(cfg.steps, "non-finite adaptation loss");
  }
  return {std::move(mod), std::move(report)};
}

AdaptResult run_adaptation(const Backbone& backbone, const Modulator& initial,
                           std::span<const Trajectory> trajectories,
                           std::span<const SegmentationMask> labels, const AdaptConfig& cfg) {
  cfg.validate();
  if (trajectories.empty()) throw ArgumentError("adaptation needs at least one trajectory");
  if (initial.registry() != backbone.registry()) {
    throw ShapeError("modulator registry does not match the backbone");
  }
  if (!labels.empty() && labels.size() != trajectories.size()) {
    throw ArgumentError("got " + std::to_string(labels.size()) + " label masks for " +
                        std::to_string(trajectories.size()) + " trajectories");
  }
  for (const auto& t : trajectories) t.validate();

  std::vector<Sample> samples;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    samples.push_back({&trajectories[i], labels.empty() ? nullptr : &labels[i]});
  }

  AdaptResult result;
  if (cfg.granularity == Granularity::kPerDataset) {
    auto [mod, report] = optimize(backbone, initial, samples, cfg, "dataset");
    result.modulators.push_back(std::move(mod));
    result.reports.push_back(std::move(report));
    return result;
  }

  // Per case: every case restarts from `initial`. Cases are independent,
  // so they are distributed over worker threads.
  const std::size_t n = samples.size();
  std::vector<std::optional<std::pair<Modulator, AdaptReport>>> slots(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i] = optimize(backbone, initial, std::span<const Sample>(&samples[i], 1), cfg,
                            trajectories[i].case_id);
      } catch (...) {
        const std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const auto jobs = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), n);
  {
    std::vector<std::jthread> pool;
    for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);
  for (auto& slot : slots) {
    result.modulators.push_back(std::move(slot->first));
    result.reports.push_back(std::move(slot->second));
  }
  return result;
}

}  // namespace

AdaptResult adapt(const Backbone& backbone, const Modulator& initial,
                  std::span<const Trajectory> trajectories, const AdaptConfig& cfg) {
  return run_adaptation(backbone, initial, trajectories, {}, cfg);
}

AdaptResult supervised_adapt(const Backbone& backbone, const Modulator& initial,
                             std::span<const Trajectory> trajectories,
                             std::span<const SegmentationMask> labels, const AdaptConfig& cfg) {
  if (labels.size() != trajectories.size()) {
    throw ArgumentError("supervised adaptation needs one label mask per trajectory");
  }
  return run_adaptation(backbone, initial, trajectories, labels, cfg);
}

std::vector<ProbMap> predict_trajectory(const Backbone& backbone, const Modulator* modulator,
                                        const Trajectory& trajectory) {
  std::vector<ProbMap> maps;
  maps.reserve(trajectory.steps.size());
  for (const auto& step : trajectory.steps) {
    if (modulator == nullptr) {
      maps.push_back(backbone.forward(step.image));
    } else {
      const ModulationSet mod = modulator->forward(step.time, trajectory.horizon);
      maps.push_back(backbone.forward(step.image, &mod));
    }
  }
  return maps;
}

}  // namespace trajtta
