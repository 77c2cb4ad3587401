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
#include <map>
#include <span>
#include <string>
#include <vector>

namespace trajtta {

// Row-major 2D array of real intensities.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0);
  Image(int h, int w, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width;
  }

  // Throws ShapeError on dimension mismatch and DomainError on non-finite data.
  void validate() const;

  bool operator==(const Image&) const = default;
};

// Integer label map; class 0 is background.
struct SegmentationMask {
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<std::int32_t> labels;

  SegmentationMask() = default;
  SegmentationMask(int h, int w, int classes);

  std::size_t size() const { return labels.size(); }
  std::int32_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::int32_t at(int y, int x) const {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
  std::size_t count(int cls) const;

  void validate() const;

  bool operator==(const SegmentationMask&) const = default;
};

// Observed data, possibly at a lower resolution than the clean image.
struct Measurement {
  Image data;
  std::string operator_id;

  void validate() const;

  bool operator==(const Measurement&) const = default;
};

// A stack of equally sized slices belonging to one case.
struct Volume {
  std::vector<Image> slices;
  std::string case_id;
  std::map<std::string, std::string> metadata;

  void validate() const;
};

}  // namespace trajtta
