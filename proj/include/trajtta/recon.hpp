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
#include <string>
#include <vector>

#include "trajtta/image.hpp"
#include "trajtta/operators.hpp"

namespace trajtta {

// Strictly decreasing reconstruction times t_0 > ... > t_{S-1} = 0 in [0, T].
struct TimeSchedule {
  std::vector<double> times;
  double horizon = 1.0;

  int steps() const { return static_cast<int>(times.size()); }
};

// Geometric spacing: the gap between consecutive times shrinks by `ratio`
// at each step, starting at T and ending exactly at 0. S == 1 yields {0}.
TimeSchedule make_schedule(int steps, double horizon, double ratio = 1.5);

// D(x, m) = 0.5 * ||A x - m||^2 and its gradient A^T (A x - m).
double data_consistency(const Image& x, const Image& m, const ForwardOperator& op);
Image data_consistency_grad(const Image& x, const Image& m, const ForwardOperator& op);

// Separable Gaussian blur with clamped borders (radius ceil(3 sigma)).
Image gaussian_blur(const Image& img, double sigma);

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  // Denoised estimate of z at time t.
  virtual Image predict(const Image& z, double t) const = 0;
};

// Convex blend between the iterate and a blurred pseudoinverse of the
// measurement: (1 - t/T) z + (t/T) blur(A^+ m). Identity at t = 0.
class ReferenceDenoiser : public Denoiser {
 public:
  ReferenceDenoiser(const Measurement& m, const ForwardOperator& op, double horizon,
                    double blur_sigma = 1.0);

  Image predict(const Image& z, double t) const override;
  const Image& anchor() const { return anchor_; }

 private:
  Image anchor_;
  double horizon_;
};

enum class InitMode { kNoise, kPseudoinverse, kMixture };

InitMode parse_init_mode(const std::string& name);
std::string to_string(InitMode mode);

struct ReconConfig {
  int steps = 10;
  double horizon = 1.0;
  double step_size = 0.5;
  InitMode init_mode = InitMode::kPseudoinverse;
  std::uint64_t noise_seed = 0;
  // Std of re-injected noise at t = T; scaled by t_{i+1}/T at each update.
  double noise_scale = 0.1;
  double schedule_ratio = 1.5;
  double blur_sigma = 0.5;

  void validate() const;
};

struct TrajectoryStep {
  Image image;
  double time = 0.0;

  bool operator==(const TrajectoryStep&) const = default;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  std::string case_id;
  double horizon = 1.0;

  int size() const { return static_cast<int>(steps.size()); }

  void validate() const;
  bool operator==(const Trajectory&) const = default;
};

// Runs the denoise / data-consistency / re-noise loop and records each
// post-data-consistency iterate with its time.
Trajectory reconstruct(const Measurement& m, const ForwardOperator& op,
                       const Denoiser& denoiser, const ReconConfig& cfg,
                       const std::string& case_id = "");

// Convenience overload using ReferenceDenoiser.
Trajectory reconstruct(const Measurement& m, const ReconConfig& cfg,
                       const std::string& case_id = "");

// <dir>/step_###.npy plus manifest.json listing (index, time).
void save_trajectory(const std::filesystem::path& dir, const Trajectory& traj);
Trajectory load_trajectory(const std::filesystem::path& dir);

}  // namespace trajtta
