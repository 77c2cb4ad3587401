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

#include "trajtta/recon.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "trajtta/errors.hpp"
#include "trajtta/npy.hpp"

namespace trajtta {

TimeSchedule make_schedule(int steps, double horizon, double ratio) {
  if (steps < 1) throw ConfigError("schedule needs at least one step");
  if (!(horizon > 0.0)) throw ConfigError("schedule horizon must be positive");
  if (!(ratio >= 1.0)) throw ConfigError("schedule ratio must be >= 1");

  TimeSchedule sched;
  sched.horizon = horizon;
  sched.times.resize(static_cast<std::size_t>(steps));
  if (steps == 1) {
    sched.times[0] = 0.0;
    return sched;
  }
  // Gap between t_i and t_{i+1} is proportional to ratio^(S-2-i).
  const int gaps = steps - 1;
  for (int i = 0; i < steps; ++i) {
    double frac;
    if (ratio == 1.0) {
      frac = static_cast<double>(gaps - i) / gaps;
    } else {
      frac = (std::pow(ratio, gaps - i) - 1.0) / (std::pow(ratio, gaps) - 1.0);
    }
    sched.times[static_cast<std::size_t>(i)] = horizon * frac;
  }
  sched.times.front() = horizon;
  sched.times.back() = 0.0;
  return sched;
}

double data_consistency(const Image& x, const Image& m, const ForwardOperator& op) {
  const Image ax = op.apply(x);
  if (!ax.same_shape(m)) throw ShapeError("measurement does not match A x");
  double acc = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double r = ax.data[i] - m.data[i];
    acc += r * r;
  }
  return 0.5 * acc;
}

Image data_consistency_grad(const Image& x, const Image& m, const ForwardOperator& op) {
  Image residual = op.apply(x);
  if (!residual.same_shape(m)) {
    throw ShapeError("measurement " + std::to_string(m.height) + "x" +
                     std::to_string(m.width) + " does not match A x of size " +
                     std::to_string(residual.height) + "x" + std::to_string(residual.width));
  }
  for (std::size_t i = 0; i < m.size(); ++i) residual.data[i] -= m.data[i];
  return op.adjoint(residual);
}

Image gaussian_blur(const Image& img, double sigma) {
  if (!(sigma > 0.0)) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * k * k / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = v;
    norm += v;
  }
  for (auto& v : kernel) v /= norm;

  auto clamp = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
  Image tmp(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * img.at(y, clamp(x + k, img.width));
      }
      tmp.at(y, x) = acc;
    }
  }
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp.at(clamp(y + k, img.height), x);
      }
      out.at(y, x) = acc;
    }
  }
  return out;
}

ReferenceDenoiser::ReferenceDenoiser(const Measurement& m, const ForwardOperator& op,
                                     double horizon, double blur_sigma)
    : anchor_(gaussian_blur(op.pseudoinverse(m.data), blur_sigma)), horizon_(horizon) {
  if (!(horizon > 0.0)) throw ConfigError("denoiser horizon must be positive");
}

Image ReferenceDenoiser::predict(const Image& z, double t) const {
  if (!(t >= 0.0 && t <= horizon_)) {
    throw DomainError("denoiser time " + std::to_string(t) + " outside [0, " +
                      std::to_string(horizon_) + "]");
  }
  if (!z.same_shape(anchor_)) throw ShapeError("denoiser input does not match anchor");
  if (t == 0.0) return z;
  const double w = t / horizon_;
  Image out(z.height, z.width);
  for (std::size_t i = 0; i < z.size(); ++i) {
    out.data[i] = (1.0 - w) * z.data[i] + w * anchor_.data[i];
  }
  return out;
}

InitMode parse_init_mode(const std::string& name) {
  if (name == "noise") return InitMode::kNoise;
  if (name == "pseudoinverse") return InitMode::kPseudoinverse;
  if (name == "mixture") return InitMode::kMixture;
  throw ConfigError("unknown init_mode '" + name + "'");
}

std::string to_string(InitMode mode) {
  switch (mode) {
    case InitMode::kNoise:
      return "noise";
    case InitMode::kPseudoinverse:
      return "pseudoinverse";
    case InitMode::kMixture:
      return "mixture";
  }
  return "unknown";
}

void ReconConfig::validate() const {
  if (steps < 1) throw ConfigError("recon steps must be >= 1");
  if (!(horizon > 0.0)) throw ConfigError("recon horizon must be positive");
  if (!(step_size > 0.0)) throw ConfigError("recon step size tau must be positive");
  if (!(noise_scale >= 0.0)) throw ConfigError("recon noise_scale must be >= 0");
}

void Trajectory::validate() const {
  if (steps.empty()) throw ConfigError("trajectory " + case_id + " is empty");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    steps[i].image.validate();
    if (!steps[i].image.same_shape(steps.front().image)) {
      throw ShapeError("trajectory images differ in size");
    }
    if (i > 0 && !(steps[i].time < steps[i - 1].time)) {
      throw DomainError("trajectory times must be strictly decreasing");
    }
  }
}

Trajectory reconstruct(const Measurement& m, const ForwardOperator& op,
                       const Denoiser& denoiser, const ReconConfig& cfg,
                       const std::string& case_id) {
  cfg.validate();
  m.validate();
  const TimeSchedule sched = make_schedule(cfg.steps, cfg.horizon, cfg.schedule_ratio);

  std::mt19937_64 rng(cfg.noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto noise_like = [&](const Image& ref, double scale) {
    Image out(ref.height, ref.width);
    for (auto& v : out.data) v = scale * normal(rng);
    return out;
  };

  const Image pinv = op.pseudoinverse(m.data);
  Image z;
  switch (cfg.init_mode) {
    case InitMode::kPseudoinverse:
      z = pinv;
      break;
    case InitMode::kNoise:
      z = noise_like(pinv, 1.0);
      break;
    case InitMode::kMixture: {
      z = noise_like(pinv, cfg.noise_scale);
      for (std::size_t i = 0; i < z.size(); ++i) z.data[i] += pinv.data[i];
      break;
    }
  }

  Trajectory traj;
  traj.case_id = case_id;
  traj.horizon = cfg.horizon;
  traj.steps.reserve(sched.times.size());
  for (int i = 0; i < sched.steps(); ++i) {
    const double t = sched.times[static_cast<std::size_t>(i)];
    Image x = denoiser.predict(z, t);
    const Image grad = data_consistency_grad(x, m.data, op);
    for (std::size_t p = 0; p < x.size(); ++p) x.data[p] -= cfg.step_size * grad.data[p];
    if (i + 1 < sched.steps()) {
      const double next = sched.times[static_cast<std::size_t>(i + 1)];
      z = noise_like(x, cfg.noise_scale * next / cfg.horizon);
      for (std::size_t p = 0; p < z.size(); ++p) z.data[p] += x.data[p];
    }
    traj.steps.push_back({std::move(x), t});
  }
  return traj;
}

Trajectory reconstruct(const Measurement& m, const ReconConfig& cfg, const std::string& case_id) {
  const auto op = ForwardOperator::from_id(m.operator_id);
  const ReferenceDenoiser denoiser(m, op, cfg.horizon, cfg.blur_sigma);
  return reconstruct(m, op, denoiser, cfg, case_id);
}

void save_trajectory(const std::filesystem::path& dir, const Trajectory& traj) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["case_id"] = traj.case_id;
  manifest["horizon"] = traj.horizon;
  manifest["S"] = traj.size();
  manifest["steps"] = nlohmann::json::array();
  for (int i = 0; i < traj.size(); ++i) {
    const auto& step = traj.steps[static_cast<std::size_t>(i)];
    char name[32];
    std::snprintf(name, sizeof(name), "step_%03d.npy", i);
    npy::write(dir / name, step.image.data,
               {static_cast<std::size_t>(step.image.height),
                static_cast<std::size_t>(step.image.width)});
    manifest["steps"].push_back({{"index", i}, {"time", step.time}, {"file", name}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError((dir / "manifest.json").string(), "cannot open for writing");
  out << manifest.dump(2) << "\n";
}

Trajectory load_trajectory(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError(manifest_path.string(), "file not found");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string(), std::string("corrupt manifest: ") + e.what());
  }
  Trajectory traj;
  try {
    traj.case_id = manifest.at("case_id").get<std::string>();
    traj.horizon = manifest.at("horizon").get<double>();
    for (const auto& entry : manifest.at("steps")) {
      const auto arr = npy::read(dir / entry.at("file").get<std::string>());
      if (arr.shape.size() != 2) {
        throw IoError(dir.string(), "trajectory image is not two-dimensional");
      }
      Image img(static_cast<int>(arr.shape[0]), static_cast<int>(arr.shape[1]),
                arr.as_double());
      traj.steps.push_back({std::move(img), entry.at("time").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string(), std::string("corrupt manifest: ") + e.what());
  }
  traj.validate();
  return traj;
}

}  // namespace trajtta
