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

#include "trajtta/losses.hpp"

#include <cmath>
#include <vector>

#include "trajtta/errors.hpp"

namespace trajtta {

namespace {

// Log-softmax of the C values at one pixel, read with stride `plane`.
void log_softmax_at(const double* z, std::size_t plane, int c, double* out) {
  double mx = z[0];
  for (int k = 1; k < c; ++k) mx = std::max(mx, z[plane * static_cast<std::size_t>(k)]);
  double sum = 0.0;
  for (int k = 0; k < c; ++k) sum += std::exp(z[plane * static_cast<std::size_t>(k)] - mx);
  const double lse = mx + std::log(sum);
  for (int k = 0; k < c; ++k) out[k] = z[plane * static_cast<std::size_t>(k)] - lse;
}

}  // namespace

double pixel_cross_entropy(const nn::Tensor& logits, std::span<const std::int32_t> labels,
                           std::span<const double> class_weights, nn::Tensor* dlogits,
                           double grad_scale) {
  const std::size_t hw = logits.plane();
  if (labels.size() != hw * static_cast<std::size_t>(logits.n)) {
    throw ShapeError("label count does not match logits");
  }
  if (!class_weights.empty() && class_weights.size() != static_cast<std::size_t>(logits.c)) {
    throw ShapeError("class weight count does not match logits");
  }
  if (dlogits != nullptr) *dlogits = nn::Tensor(logits.n, logits.c, logits.h, logits.w);
  std::vector<double> logp(static_cast<std::size_t>(logits.c));
  double total = 0.0;
  for (int i = 0; i < logits.n; ++i) {
    const double* z = logits.sample(i);
    const std::int32_t* y = labels.data() + hw * static_cast<std::size_t>(i);
    double wsum = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      wsum += class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y[p])];
    }
    double loss = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      if (y[p] < 0 || y[p] >= logits.c) throw DomainError("label outside class range");
      const double w =
          (class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y[p])]) / wsum;
      log_softmax_at(z + p, hw, logits.c, logp.data());
      loss -= w * logp[static_cast<std::size_t>(y[p])];
      if (dlogits != nullptr) {
        double* g = dlogits->sample(i) + p;
        for (int k = 0; k < logits.c; ++k) {
          const double prob = std::exp(logp[static_cast<std::size_t>(k)]);
          g[hw * static_cast<std::size_t>(k)] = grad_scale * w * (prob - (k == y[p] ? 1.0 : 0.0));
        }
      }
    }
    total += loss;
  }
  return total;
}

double pixel_entropy(const nn::Tensor& logits, nn::Tensor* dlogits, double grad_scale) {
  const std::size_t hw = logits.plane();
  if (dlogits != nullptr) *dlogits = nn::Tensor(logits.n, logits.c, logits.h, logits.w);
  std::vector<double> logp(static_cast<std::size_t>(logits.c));
  const double inv_d = 1.0 / static_cast<double>(hw);
  double total = 0.0;
  for (int i = 0; i < logits.n; ++i) {
    const double* z = logits.sample(i);
    double sample_sum = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      log_softmax_at(z + p, hw, logits.c, logp.data());
      double h = 0.0;
      for (int k = 0; k < logits.c; ++k) {
        const double lp = logp[static_cast<std::size_t>(k)];
        h -= std::exp(lp) * lp;
      }
      sample_sum += h;
      if (dlogits != nullptr) {
        // dH/dz_k = -p_k (log p_k + H)
        double* g = dlogits->sample(i) + p;
        for (int k = 0; k < logits.c; ++k) {
          const double lp = logp[static_cast<std::size_t>(k)];
          g[hw * static_cast<std::size_t>(k)] = -grad_scale * inv_d * std::exp(lp) * (lp + h);
        }
      }
    }
    total += sample_sum * inv_d;
  }
  return total;
}

}  // namespace trajtta
