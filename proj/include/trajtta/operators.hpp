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

#include <string>
#include <vector>

#include "trajtta/image.hpp"

namespace trajtta {

// Linear measurement operator A. Every registered operator is block average
// pooling by an integer factor; factor 1 is the identity ("identity"),
// factors 2 and 4 model lower-resolution acquisitions ("avgpool2",
// "avgpool4").
class ForwardOperator {
 public:
  // Throws ConfigError for an unregistered id.
  static ForwardOperator from_id(const std::string& operator_id);
  static const std::vector<std::string>& registered_ids();
  static bool is_registered(const std::string& operator_id);

  const std::string& id() const { return id_; }
  int factor() const { return factor_; }

  // Measurement dimensions for a clean image of the given size. Throws
  // ShapeError when the size is not divisible by the pooling factor.
  int measurement_height(int image_height) const;
  int measurement_width(int image_width) const;

  Image apply(const Image& x) const;
  Image adjoint(const Image& m) const;
  // Moore-Penrose pseudoinverse; for block averaging this is nearest
  // upsampling, since A A^T = I / factor^2.
  Image pseudoinverse(const Image& m) const;

 private:
  ForwardOperator(std::string id, int factor) : id_(std::move(id)), factor_(factor) {}

  std::string id_;
  int factor_;
};

}  // namespace trajtta
