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

#include "trajtta/nn.hpp"

namespace trajtta {

// Pixel losses on NCHW logits. Both return the sum over samples of the
// per-sample spatial mean, and write the matching gradient into `dlogits`
// (scaled by `grad_scale`) when it is non-null.

// Weighted cross-entropy; labels are N*H*W class indices. Empty
// class_weights means uniform weighting.
double pixel_cross_entropy(const nn::Tensor& logits, std::span<const std::int32_t> labels,
                           std::span<const double> class_weights, nn::Tensor* dlogits,
                           double grad_scale = 1.0);

// Shannon entropy of the softmax, natural log.
double pixel_entropy(const nn::Tensor& logits, nn::Tensor* dlogits, double grad_scale = 1.0);

}  // namespace trajtta
