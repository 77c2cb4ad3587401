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

#include "trajtta/operators.hpp"

#include <algorithm>

#include "trajtta/errors.hpp"

namespace trajtta {

namespace {

struct Registered {
  const char* id;
  int factor;
};

constexpr Registered kOperators[] = {{"identity", 1}, {"avgpool2", 2}, {"avgpool4", 4}};

}  // namespace

ForwardOperator ForwardOperator::from_id(const std::string& operator_id) {
  for (const auto& op : kOperators) {
    if (operator_id == op.id) return ForwardOperator(op.id, op.factor);
  }
  throw ConfigError("unknown forward operator '" + operator_id + "'");
}

const std::vector<std::string>& ForwardOperator::registered_ids() {
  static const std::vector<std::string> ids = [] {
    std::vector<std::string> out;
    for (const auto& op : kOperators) out.emplace_back(op.id);
    return out;
  }();
  return ids;
}

bool ForwardOperator::is_registered(const std::string& operator_id) {
  const auto& ids = registered_ids();
  return std::find(ids.begin(), ids.end(), operator_id) != ids.end();
}

int ForwardOperator::measurement_height(int image_height) const {
  if (image_height <= 0 || image_height % factor_ != 0) {
    throw ShapeError("height " + std::to_string(image_height) +
                     " not divisible by pooling factor of " + id_);
  }
  return image_height / factor_;
}

int ForwardOperator::measurement_width(int image_width) const {
  if (image_width <= 0 || image_width % factor_ != 0) {
    throw ShapeError("width " + std::to_string(image_width) +
                     " not divisible by pooling factor of " + id_);
  }
  return image_width / factor_;
}

Image ForwardOperator::apply(const Image& x) const {
  if (factor_ == 1) return x;
  Image m(measurement_height(x.height), measurement_width(x.width));
  const double scale = 1.0 / (factor_ * factor_);
  for (int y = 0; y < m.height; ++y) {
    for (int xx = 0; xx < m.width; ++xx) {
      double acc = 0.0;
      for (int a = 0; a < factor_; ++a) {
        for (int b = 0; b < factor_; ++b) acc += x.at(y * factor_ + a, xx * factor_ + b);
      }
      m.at(y, xx) = acc * scale;
    }
  }
  return m;
}

Image ForwardOperator::adjoint(const Image& m) const {
  if (factor_ == 1) return m;
  Image x(m.height * factor_, m.width * factor_);
  const double scale = 1.0 / (factor_ * factor_);
  for (int y = 0; y < x.height; ++y) {
    for (int xx = 0; xx < x.width; ++xx) x.at(y, xx) = m.at(y / factor_, xx / factor_) * scale;
  }
  return x;
}

Image ForwardOperator::pseudoinverse(const Image& m) const {
  if (factor_ == 1) return m;
  Image x(m.height * factor_, m.width * factor_);
  for (int y = 0; y < x.height; ++y) {
    for (int xx = 0; xx < x.width; ++xx) x.at(y, xx) = m.at(y / factor_, xx / factor_);
  }
  return x;
}

}  // namespace trajtta
