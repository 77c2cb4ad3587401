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

#include "trajtta/image.hpp"

#include <algorithm>
#include <cmath>

#include "trajtta/errors.hpp"

namespace trajtta {

Image::Image(int h, int w, double fill) : height(h), width(w) {
  if (h <= 0 || w <= 0) {
    throw ShapeError("image dimensions must be positive, got " + std::to_string(h) +
                     "x" + std::to_string(w));
  }
  data.assign(static_cast<std::size_t>(h) * w, fill);
}

Image::Image(int h, int w, std::vector<double> values)
    : height(h), width(w), data(std::move(values)) {
  validate();
}

void Image::validate() const {
  if (height <= 0 || width <= 0) {
    throw ShapeError("image dimensions must be positive");
  }
  if (data.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("image holds " + std::to_string(data.size()) +
                     " values, declared " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  if (!std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); })) {
    throw DomainError("image contains non-finite values");
  }
}

SegmentationMask::SegmentationMask(int h, int w, int classes)
    : height(h), width(w), num_classes(classes) {
  if (h <= 0 || w <= 0) {
    throw ShapeError("mask dimensions must be positive");
  }
  labels.assign(static_cast<std::size_t>(h) * w, 0);
}

std::size_t SegmentationMask::count(int cls) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), cls));
}

void SegmentationMask::validate() const {
  if (num_classes < 2) {
    throw ConfigError("segmentation needs at least 2 classes, got " +
                      std::to_string(num_classes));
  }
  if (height <= 0 || width <= 0 ||
      labels.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("mask size does not match its declared dimensions");
  }
  for (auto l : labels) {
    if (l < 0 || l >= num_classes) {
      throw DomainError("label " + std::to_string(l) + " outside [0, " +
                        std::to_string(num_classes - 1) + "]");
    }
  }
}

void Measurement::validate() const {
  data.validate();
  if (operator_id.empty()) {
    throw ConfigError("measurement has no operator id");
  }
}

void Volume::validate() const {
  if (case_id.empty()) {
    throw ConfigError("volume case_id must be non-empty");
  }
  for (const auto& s : slices) {
    s.validate();
    if (!s.same_shape(slices.front())) {
      throw ShapeError("volume " + case_id + " has slices of differing size");
    }
  }
}

}  // namespace trajtta
