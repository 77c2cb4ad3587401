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
#include <vector>

namespace trajtta::nn {

// Dense NCHW tensor of doubles.
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, double fill = 0.0)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return plane() * c; }
  double* sample(int i) { return data.data() + sample_size() * i; }
  const double* sample(int i) const { return data.data() + sample_size() * i; }
  double* channel(int i, int ch) { return sample(i) + plane() * ch; }
  const double* channel(int i, int ch) const { return sample(i) + plane() * ch; }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

// Convolution with stride 1 and "same" zero padding; kernel is 1 or 3.
// weight layout: [cout][cin][k][k]; bias may be empty.
void conv_forward(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
                  int cout, int kernel, Tensor& y);
// Accumulates into dweight / dbias when non-empty; writes dx when non-null.
void conv_backward(const Tensor& x, const Tensor& dy, std::span<const double> weight, int kernel,
                   Tensor* dx, std::span<double> dweight, std::span<double> dbias);

enum class NormKind { kBatch, kLayer };

// Per-call statistics needed by the backward pass.
struct NormStats {
  std::vector<double> mean;     // per channel (batch) or per sample (layer)
  std::vector<double> var;      // biased variance matching `mean`
  std::vector<double> inv_std;
};

// Batch norm: training uses batch statistics, evaluation uses the running
// ones. Layer norm: per-sample statistics over (C, H, W) in both modes.
// In both flavours the per-channel affine (scale, shift) is applied last and
// `xhat` receives the pre-affine normalized values. Running statistics are
// only read; callers fold `stats` into them after a training step.
void norm_forward(NormKind kind, bool training, const Tensor& x, std::span<const double> scale,
                  std::span<const double> shift, std::span<const double> running_mean,
                  std::span<const double> running_var, double eps, Tensor& xhat, Tensor& y,
                  NormStats& stats);
void norm_backward(NormKind kind, bool training, const Tensor& xhat, const Tensor& dy,
                   std::span<const double> scale, const NormStats& stats, Tensor& dx,
                   std::span<double> dscale, std::span<double> dshift);

void relu_forward(const Tensor& x, Tensor& y);
// dy is masked in place by x > 0.
void relu_backward(const Tensor& x, Tensor& dy);

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<std::int32_t>& argmax);
void maxpool2_backward(const Tensor& dy, const std::vector<std::int32_t>& argmax, Tensor& dx);

void upsample2_forward(const Tensor& x, Tensor& y);
void upsample2_backward(const Tensor& dy, Tensor& dx);

// Channel concatenation [a, b] and its inverse split.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& d, Tensor& da, Tensor& db);

}  // namespace trajtta::nn
