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

#include "trajtta/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "trajtta/errors.hpp"
#include "trajtta/npy.hpp"
#include "trajtta/operators.hpp"

namespace trajtta {

namespace fs = std::filesystem;

void PhantomConfig::validate() const {
  if (height <= 0 || width <= 0) throw ConfigError("phantom dimensions must be positive");
  if (num_classes < 2) throw ConfigError("phantom needs num_classes >= 2");
  if (min_bands < 1 || max_bands < min_bands) throw ConfigError("invalid band count range");
  if (min_lesions < 0 || max_lesions < min_lesions) {
    throw ConfigError("invalid lesion count range");
  }
  if (!(min_radius > 0.0) || max_radius < min_radius) throw ConfigError("invalid lesion radius range");
  if (absent_probability < 0.0 || absent_probability > 1.0) {
    throw ConfigError("absent_probability must lie in [0, 1]");
  }
  if (speckle < 0.0 || measurement_noise < 0.0) throw ConfigError("noise levels must be >= 0");
  if (!ForwardOperator::is_registered(operator_id)) {
    throw ConfigError("unknown forward operator '" + operator_id + "'");
  }
  const auto op = ForwardOperator::from_id(operator_id);
  if (height % op.factor() != 0 || width % op.factor() != 0) {
    throw ConfigError("phantom size not divisible by the pooling factor of " + operator_id);
  }
}

void ShiftConfig::validate() const {
  if (!(gamma > 0.0)) throw ConfigError("shift gamma must be positive");
  if (!(noise >= 0.0)) throw ConfigError("shift noise must be >= 0");
}

namespace {

// Intensity signature of a foreground class: odd classes are dark, even
// classes bright; every other pair gets a contrasting one-pixel rim, and
// higher classes are progressively more elongated.
struct LesionStyle {
  double fill;
  double rim;
  bool has_rim;
  double aspect;
};

LesionStyle style_for(int cls) {
  const bool dark = cls % 2 == 1;
  const bool rim = ((cls - 1) / 2) % 2 == 1;
  return {dark ? 0.05 : 0.95, dark ? 0.9 : 0.1, rim, 1.0 + 0.5 * ((cls - 1) / 4)};
}

}  // namespace

SyntheticCase generate_synthetic_case(std::uint64_t seed, const PhantomConfig& config,
                                      const std::string& case_id) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::normal_distribution<double> normal(0.0, 1.0);

  const int h = config.height;
  const int w = config.width;
  SyntheticCase out;
  out.case_id = case_id.empty() ? "case_" + std::to_string(seed) : case_id;
  out.seed = seed;
  out.clean = Image(h, w);
  out.mask = SegmentationMask(h, w, config.num_classes);

  // Wavy layer boundaries sharing one curvature, as in a retinal B-scan.
  const int bands = uniform_int(config.min_bands, config.max_bands);
  std::vector<double> base(static_cast<std::size_t>(bands - 1));
  for (auto& b : base) b = uniform(0.12, 0.92) * h;
  std::sort(base.begin(), base.end());
  const double period = uniform(1.0, 3.0) * w;
  const double phase = uniform(0.0, 2.0 * std::numbers::pi);
  const double amplitude = uniform(0.0, 0.05) * h;
  std::vector<double> levels(static_cast<std::size_t>(bands));
  for (int b = 0; b < bands; ++b) {
    levels[static_cast<std::size_t>(b)] = b % 2 == 0 ? uniform(0.28, 0.42) : uniform(0.52, 0.68);
  }
  for (int x = 0; x < w; ++x) {
    const double offset = amplitude * std::sin(2.0 * std::numbers::pi * x / period + phase);
    for (int y = 0; y < h; ++y) {
      std::size_t band = 0;
      while (band < base.size() && y >= base[band] + offset) ++band;
      out.clean.at(y, x) = levels[band];
    }
  }

  if (!config.force_empty) {
    for (int cls = 1; cls < config.num_classes; ++cls) {
      if (uniform(0.0, 1.0) < config.absent_probability) continue;
      const LesionStyle style = style_for(cls);
      const int count = uniform_int(config.min_lesions, config.max_lesions);
      for (int k = 0; k < count; ++k) {
        const double ry = uniform(config.min_radius, config.max_radius);
        const double rx = std::min(ry * style.aspect * uniform(0.8, 1.6), 0.45 * w);
        const double cy = uniform(0.2, 0.85) * h;
        const double cx = uniform(rx, w - rx);
        const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + ry)));
        const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + rx)));
        for (int y = y0; y <= y1; ++y) {
          for (int x = x0; x <= x1; ++x) {
            const double dy = (y + 0.5 - cy) / ry;
            const double dx = (x + 0.5 - cx) / rx;
            const double r2 = dx * dx + dy * dy;
            if (r2 > 1.0) continue;
            // Rim: outer shell roughly one pixel thick.
            const double inner = 1.0 - 1.0 / std::min(rx, ry);
            const bool on_rim = style.has_rim && r2 > inner * inner;
            out.clean.at(y, x) = on_rim ? style.rim : style.fill;
            out.mask.at(y, x) = cls;
          }
        }
      }
    }
  }

  for (auto& v : out.clean.data) {
    v = std::clamp(v * (1.0 + config.speckle * normal(rng)), 0.0, 1.0);
  }

  const auto op = ForwardOperator::from_id(config.operator_id);
  out.measurement.operator_id = config.operator_id;
  out.measurement.data = op.apply(out.clean);
  for (auto& v : out.measurement.data.data) v += config.measurement_noise * normal(rng);
  return out;
}

Measurement apply_domain_shift(const Measurement& m, const ShiftConfig& shift,
                               std::uint64_t seed) {
  shift.validate();
  if (shift.is_identity()) return m;
  // Decorrelate from the generator stream of the same seed.
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  Measurement out = m;
  for (auto& v : out.data.data) {
    v = shift.gain * std::pow(std::max(v, 0.0), shift.gamma) + shift.offset;
    if (shift.noise > 0.0) v += shift.noise * normal(rng);
  }
  return out;
}

namespace {

std::vector<std::size_t> shape_of(const Image& img) {
  return {static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)};
}

Image read_image(const fs::path& path, int expect_h, int expect_w) {
  const auto arr = npy::read(path);
  if (arr.dtype != "<f8") throw IoError(path.string(), "expected float64 payload");
  if (arr.shape.size() != 2 || static_cast<int>(arr.shape[0]) != expect_h ||
      static_cast<int>(arr.shape[1]) != expect_w) {
    throw IoError(path.string(), "dimension mismatch with manifest");
  }
  return Image(expect_h, expect_w, arr.as_double());
}

}  // namespace

void save_case(const fs::path& dir, const SyntheticCase& c) {
  fs::create_directories(dir);
  npy::write(dir / "clean.npy", c.clean.data, shape_of(c.clean));
  npy::write(dir / "mask.npy", c.mask.labels,
             {static_cast<std::size_t>(c.mask.height), static_cast<std::size_t>(c.mask.width)});
  npy::write(dir / "measurement.npy", c.measurement.data.data, shape_of(c.measurement.data));

  nlohmann::json manifest = {
      {"case_id", c.case_id},
      {"seed", c.seed},
      {"height", c.clean.height},
      {"width", c.clean.width},
      {"num_classes", c.mask.num_classes},
      {"operator_id", c.measurement.operator_id},
      {"measurement_height", c.measurement.data.height},
      {"measurement_width", c.measurement.data.width},
  };
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError((dir / "manifest.json").string(), "cannot open for writing");
  out << manifest.dump(2) << "\n";
}

SyntheticCase load_case(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError(manifest_path.string(), "file not found");
  nlohmann::json manifest;
  SyntheticCase c;
  int h = 0, w = 0, mh = 0, mw = 0;
  try {
    manifest = nlohmann::json::parse(in);
    c.case_id = manifest.at("case_id").get<std::string>();
    c.seed = manifest.at("seed").get<std::uint64_t>();
    h = manifest.at("height").get<int>();
    w = manifest.at("width").get<int>();
    c.mask.num_classes = manifest.at("num_classes").get<int>();
    c.measurement.operator_id = manifest.at("operator_id").get<std::string>();
    mh = manifest.at("measurement_height").get<int>();
    mw = manifest.at("measurement_width").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string(), std::string("corrupt manifest: ") + e.what());
  }
  if (c.mask.num_classes < 2) {
    throw ConfigError(manifest_path.string() + ": declares num_classes=" +
                      std::to_string(c.mask.num_classes) + ", need >= 2");
  }
  if (!ForwardOperator::is_registered(c.measurement.operator_id)) {
    throw ConfigError(manifest_path.string() + ": unknown operator '" +
                      c.measurement.operator_id + "'");
  }
  if (h <= 0 || w <= 0 || mh <= 0 || mw <= 0) {
    throw IoError(manifest_path.string(), "nonpositive dimensions");
  }

  c.clean = read_image(dir / "clean.npy", h, w);
  c.measurement.data = read_image(dir / "measurement.npy", mh, mw);
  const auto mask_path = dir / "mask.npy";
  const auto mask = npy::read(mask_path);
  if (mask.dtype != "<i4") throw IoError(mask_path.string(), "expected int32 payload");
  if (mask.shape.size() != 2 || static_cast<int>(mask.shape[0]) != h ||
      static_cast<int>(mask.shape[1]) != w) {
    throw IoError(mask_path.string(), "dimension mismatch with manifest");
  }
  c.mask.height = h;
  c.mask.width = w;
  c.mask.labels = mask.as_int32();
  c.mask.validate();
  return c;
}

std::vector<fs::path> list_case_dirs(const fs::path& root, const std::string& prefix) {
  if (!fs::is_directory(root)) throw IoError(root.string(), "dataset directory not found");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const auto name = entry.path().filename().string();
    if (name.rfind(prefix, 0) != 0) continue;
    if (fs::exists(entry.path() / "manifest.json")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace trajtta
