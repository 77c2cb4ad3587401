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

#include "trajtta/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "trajtta/errors.hpp"

namespace trajtta::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Rows [y0, y1) of the 3x3 im2col matrix with zero padding; column
// index is (y - y0) * w + x.
void im2col3x3(const double* in, int c, int h, int w, int y0, int y1, double* cols) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t tile = static_cast<std::size_t>(y1 - y0) * w;
  for (int ci = 0; ci < c; ++ci) {
    const double* plane = in + hw * ci;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = cols + tile * (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx);
        const int dy = ky - 1;
        const int dx = kx - 1;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = y0; y < y1; ++y) {
          const int sy = y + dy;
          double* row = dst + static_cast<std::size_t>(y - y0) * w;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sy) * w;
          for (int x = 0; x < x0; ++x) row[x] = 0.0;
          for (int x = x0; x < x1; ++x) row[x] = src[x + dx];
          for (int x = x1; x < w; ++x) row[x] = 0.0;
        }
      }
    }
  }
}

// Adjoint of im2col3x3 over the same row range; accumulates into out.
void col2im3x3(const double* cols, int c, int h, int w, int y0, int y1, double* out) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t tile = static_cast<std::size_t>(y1 - y0) * w;
  for (int ci = 0; ci < c; ++ci) {
    double* plane = out + hw * ci;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = cols + tile * (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx);
        const int dy = ky - 1;
        const int dx = kx - 1;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = y0; y < y1; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const double* row = src + static_cast<std::size_t>(y - y0) * w;
          double* dst = plane + static_cast<std::size_t>(sy) * w;
          for (int x = x0; x < x1; ++x) dst[x + dx] += row[x];
        }
      }
    }
  }
}

void check_kernel(int kernel) {
  if (kernel != 1 && kernel != 3) throw ConfigError("only 1x1 and 3x3 kernels are supported");
}

// Image rows per im2col tile, sized so a tile stays around 64 KiB.
int tile_rows(int cin, int w) {
  const int per_row = 9 * cin * w;
  return std::max(1, 8192 / std::max(1, per_row));
}

using Strided = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStrided = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

}  // namespace

void conv_forward(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
                  int cout, int kernel, Tensor& y) {
  check_kernel(kernel);
  const int kdim = x.c * kernel * kernel;
  if (weight.size() != static_cast<std::size_t>(cout) * kdim) {
    throw ShapeError("conv weight has " + std::to_string(weight.size()) + " entries, expected " +
                     std::to_string(static_cast<std::size_t>(cout) * kdim));
  }
  y = Tensor(x.n, cout, x.h, x.w);
  const auto hw = static_cast<Eigen::Index>(x.plane());
  ConstMatrixMap wmat(weight.data(), cout, kdim);
  const int rows = tile_rows(x.c, x.w);
  std::vector<double> cols;
  if (kernel == 3) cols.resize(static_cast<std::size_t>(kdim) * rows * x.w);
  for (int i = 0; i < x.n; ++i) {
    if (kernel == 1) {
      MatrixMap(y.sample(i), cout, hw).noalias() = wmat * ConstMatrixMap(x.sample(i), kdim, hw);
    } else {
      for (int y0 = 0; y0 < x.h; y0 += rows) {
        const int y1 = std::min(x.h, y0 + rows);
        const Eigen::Index len = static_cast<Eigen::Index>(y1 - y0) * x.w;
        im2col3x3(x.sample(i), x.c, x.h, x.w, y0, y1, cols.data());
        Strided out(y.sample(i) + static_cast<std::size_t>(y0) * x.w, cout, len,
                    Eigen::OuterStride<>(hw));
        out.noalias() = wmat * ConstMatrixMap(cols.data(), kdim, len);
      }
    }
    if (!bias.empty()) {
      MatrixMap out(y.sample(i), cout, hw);
      for (int co = 0; co < cout; ++co) out.row(co).array() += bias[static_cast<std::size_t>(co)];
    }
  }
}

void conv_backward(const Tensor& x, const Tensor& dy, std::span<const double> weight, int kernel,
                   Tensor* dx, std::span<double> dweight, std::span<double> dbias) {
  check_kernel(kernel);
  const int cout = dy.c;
  const int kdim = x.c * kernel * kernel;
  const auto hw = static_cast<Eigen::Index>(x.plane());
  ConstMatrixMap wmat(weight.data(), cout, kdim);
  if (dx != nullptr) *dx = Tensor(x.n, x.c, x.h, x.w);
  const int rows = tile_rows(x.c, x.w);
  std::vector<double> cols;
  std::vector<double> dcols;
  if (kernel == 3) {
    cols.resize(static_cast<std::size_t>(kdim) * rows * x.w);
    dcols.resize(cols.size());
  }
  for (int i = 0; i < x.n; ++i) {
    ConstMatrixMap g(dy.sample(i), cout, hw);
    if (!dbias.empty()) {
      // Scalar sum: Eigen's vectorized reduction order depends on the row's
      // address alignment, which makes training irreproducible across runs.
      for (int co = 0; co < cout; ++co) {
        const double* row = dy.sample(i) + static_cast<std::size_t>(co) * hw;
        double s = 0.0;
        for (Eigen::Index k = 0; k < hw; ++k) s += row[k];
        dbias[static_cast<std::size_t>(co)] += s;
      }
    }
    if (kernel == 1) {
      if (!dweight.empty()) {
        MatrixMap(dweight.data(), cout, kdim).noalias() +=
            g * ConstMatrixMap(x.sample(i), kdim, hw).transpose();
      }
      if (dx != nullptr) MatrixMap(dx->sample(i), kdim, hw).noalias() = wmat.transpose() * g;
      continue;
    }
    for (int y0 = 0; y0 < x.h; y0 += rows) {
      const int y1 = std::min(x.h, y0 + rows);
      const Eigen::Index len = static_cast<Eigen::Index>(y1 - y0) * x.w;
      ConstStrided gt(dy.sample(i) + static_cast<std::size_t>(y0) * x.w, cout, len,
                      Eigen::OuterStride<>(hw));
      if (!dweight.empty()) {
        im2col3x3(x.sample(i), x.c, x.h, x.w, y0, y1, cols.data());
        MatrixMap(dweight.data(), cout, kdim).noalias() +=
            gt * ConstMatrixMap(cols.data(), kdim, len).transpose();
      }
      if (dx != nullptr) {
        MatrixMap(dcols.data(), kdim, len).noalias() = wmat.transpose() * gt;
        col2im3x3(dcols.data(), x.c, x.h, x.w, y0, y1, dx->sample(i));
      }
    }
  }
}

void norm_forward(NormKind kind, bool training, const Tensor& x, std::span<const double> scale,
                  std::span<const double> shift, std::span<const double> running_mean,
                  std::span<const double> running_var, double eps, Tensor& xhat, Tensor& y,
                  NormStats& stats) {
  const std::size_t hw = x.plane();
  xhat = Tensor(x.n, x.c, x.h, x.w);
  y = Tensor(x.n, x.c, x.h, x.w);

  if (kind == NormKind::kBatch) {
    stats.mean.assign(static_cast<std::size_t>(x.c), 0.0);
    stats.var.assign(static_cast<std::size_t>(x.c), 0.0);
    stats.inv_std.assign(static_cast<std::size_t>(x.c), 0.0);
    const double count = static_cast<double>(hw) * x.n;
    for (int ch = 0; ch < x.c; ++ch) {
      const auto cu = static_cast<std::size_t>(ch);
      double mean;
      double var;
      if (training) {
        double s = 0.0;
        for (int i = 0; i < x.n; ++i) {
          const double* p = x.channel(i, ch);
          for (std::size_t k = 0; k < hw; ++k) s += p[k];
        }
        mean = s / count;
        double ss = 0.0;
        for (int i = 0; i < x.n; ++i) {
          const double* p = x.channel(i, ch);
          for (std::size_t k = 0; k < hw; ++k) ss += (p[k] - mean) * (p[k] - mean);
        }
        var = ss / count;
      } else {
        mean = running_mean[cu];
        var = running_var[cu];
      }
      const double inv = 1.0 / std::sqrt(var + eps);
      stats.mean[cu] = mean;
      stats.var[cu] = var;
      stats.inv_std[cu] = inv;
      for (int i = 0; i < x.n; ++i) {
        const double* p = x.channel(i, ch);
        double* xh = xhat.channel(i, ch);
        double* out = y.channel(i, ch);
        for (std::size_t k = 0; k < hw; ++k) {
          xh[k] = (p[k] - mean) * inv;
          out[k] = scale[cu] * xh[k] + shift[cu];
        }
      }
    }
    return;
  }

  stats.mean.assign(static_cast<std::size_t>(x.n), 0.0);
  stats.var.assign(static_cast<std::size_t>(x.n), 0.0);
  stats.inv_std.assign(static_cast<std::size_t>(x.n), 0.0);
  const std::size_t m = x.sample_size();
  for (int i = 0; i < x.n; ++i) {
    const double* p = x.sample(i);
    double s = 0.0;
    for (std::size_t k = 0; k < m; ++k) s += p[k];
    const double mean = s / static_cast<double>(m);
    double ss = 0.0;
    for (std::size_t k = 0; k < m; ++k) ss += (p[k] - mean) * (p[k] - mean);
    const double var = ss / static_cast<double>(m);
    const double inv = 1.0 / std::sqrt(var + eps);
    stats.mean[static_cast<std::size_t>(i)] = mean;
    stats.var[static_cast<std::size_t>(i)] = var;
    stats.inv_std[static_cast<std::size_t>(i)] = inv;
    for (int ch = 0; ch < x.c; ++ch) {
      const auto cu = static_cast<std::size_t>(ch);
      const double* pc = x.channel(i, ch);
      double* xh = xhat.channel(i, ch);
      double* out = y.channel(i, ch);
      for (std::size_t k = 0; k < hw; ++k) {
        xh[k] = (pc[k] - mean) * inv;
        out[k] = scale[cu] * xh[k] + shift[cu];
      }
    }
  }
}

void norm_backward(NormKind kind, bool training, const Tensor& xhat, const Tensor& dy,
                   std::span<const double> scale, const NormStats& stats, Tensor& dx,
                   std::span<double> dscale, std::span<double> dshift) {
  const std::size_t hw = xhat.plane();
  dx = Tensor(xhat.n, xhat.c, xhat.h, xhat.w);

  for (int ch = 0; ch < xhat.c; ++ch) {
    const auto cu = static_cast<std::size_t>(ch);
    double gs = 0.0;
    double gb = 0.0;
    for (int i = 0; i < xhat.n; ++i) {
      const double* g = dy.channel(i, ch);
      const double* xh = xhat.channel(i, ch);
      for (std::size_t k = 0; k < hw; ++k) {
        gs += g[k] * xh[k];
        gb += g[k];
      }
    }
    if (!dscale.empty()) dscale[cu] += gs;
    if (!dshift.empty()) dshift[cu] += gb;
  }

  if (kind == NormKind::kBatch) {
    const double count = static_cast<double>(hw) * xhat.n;
    for (int ch = 0; ch < xhat.c; ++ch) {
      const auto cu = static_cast<std::size_t>(ch);
      const double inv = stats.inv_std[cu];
      if (!training) {
        const double f = scale[cu] * inv;
        for (int i = 0; i < xhat.n; ++i) {
          const double* g = dy.channel(i, ch);
          double* out = dx.channel(i, ch);
          for (std::size_t k = 0; k < hw; ++k) out[k] = g[k] * f;
        }
        continue;
      }
      // dxhat = dy * scale; dx = inv/M (M dxhat - sum dxhat - xhat sum(dxhat xhat))
      double sum_d = 0.0;
      double sum_dx = 0.0;
      for (int i = 0; i < xhat.n; ++i) {
        const double* g = dy.channel(i, ch);
        const double* xh = xhat.channel(i, ch);
        for (std::size_t k = 0; k < hw; ++k) {
          sum_d += g[k];
          sum_dx += g[k] * xh[k];
        }
      }
      sum_d *= scale[cu];
      sum_dx *= scale[cu];
      for (int i = 0; i < xhat.n; ++i) {
        const double* g = dy.channel(i, ch);
        const double* xh = xhat.channel(i, ch);
        double* out = dx.channel(i, ch);
        for (std::size_t k = 0; k < hw; ++k) {
          out[k] = inv / count * (count * g[k] * scale[cu] - sum_d - xh[k] * sum_dx);
        }
      }
    }
    return;
  }

  const double m = static_cast<double>(xhat.sample_size());
  for (int i = 0; i < xhat.n; ++i) {
    const double inv = stats.inv_std[static_cast<std::size_t>(i)];
    double sum_d = 0.0;
    double sum_dx = 0.0;
    for (int ch = 0; ch < xhat.c; ++ch) {
      const double s = scale[static_cast<std::size_t>(ch)];
      const double* g = dy.channel(i, ch);
      const double* xh = xhat.channel(i, ch);
      for (std::size_t k = 0; k < hw; ++k) {
        sum_d += g[k] * s;
        sum_dx += g[k] * s * xh[k];
      }
    }
    for (int ch = 0; ch < xhat.c; ++ch) {
      const double s = scale[static_cast<std::size_t>(ch)];
      const double* g = dy.channel(i, ch);
      const double* xh = xhat.channel(i, ch);
      double* out = dx.channel(i, ch);
      for (std::size_t k = 0; k < hw; ++k) {
        out[k] = inv / m * (m * g[k] * s - sum_d - xh[k] * sum_dx);
      }
    }
  }
}

void relu_forward(const Tensor& x, Tensor& y) {
  y = Tensor(x.n, x.c, x.h, x.w);
  // NaN passes through so divergence surfaces as a non-finite loss.
  for (std::size_t k = 0; k < x.data.size(); ++k) {
    const double v = x.data[k];
    y.data[k] = v > 0.0 || std::isnan(v) ? v : 0.0;
  }
}

void relu_backward(const Tensor& x, Tensor& dy) {
  for (std::size_t k = 0; k < x.data.size(); ++k) {
    if (!(x.data[k] > 0.0)) dy.data[k] = 0.0;
  }
}

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<std::int32_t>& argmax) {
  if (x.h % 2 != 0 || x.w % 2 != 0) throw ShapeError("maxpool input must have even size");
  y = Tensor(x.n, x.c, x.h / 2, x.w / 2);
  argmax.assign(y.data.size(), 0);
  std::size_t o = 0;
  for (int i = 0; i < x.n; ++i) {
    for (int ch = 0; ch < x.c; ++ch) {
      const double* p = x.channel(i, ch);
      for (int yy = 0; yy < y.h; ++yy) {
        for (int xx = 0; xx < y.w; ++xx, ++o) {
          auto best = static_cast<std::int32_t>((2 * yy) * x.w + 2 * xx);
          for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
              const auto idx = static_cast<std::int32_t>((2 * yy + a) * x.w + 2 * xx + b);
              if (p[idx] > p[best]) best = idx;
            }
          }
          y.data[o] = p[best];
          argmax[o] = best;
        }
      }
    }
  }
}

void maxpool2_backward(const Tensor& dy, const std::vector<std::int32_t>& argmax, Tensor& dx) {
  dx = Tensor(dy.n, dy.c, dy.h * 2, dy.w * 2);
  std::size_t o = 0;
  for (int i = 0; i < dy.n; ++i) {
    for (int ch = 0; ch < dy.c; ++ch) {
      double* p = dx.channel(i, ch);
      for (std::size_t k = 0; k < dy.plane(); ++k, ++o) p[argmax[o]] += dy.data[o];
    }
  }
}

void upsample2_forward(const Tensor& x, Tensor& y) {
  y = Tensor(x.n, x.c, x.h * 2, x.w * 2);
  for (int i = 0; i < x.n; ++i) {
    for (int ch = 0; ch < x.c; ++ch) {
      const double* p = x.channel(i, ch);
      double* q = y.channel(i, ch);
      for (int yy = 0; yy < y.h; ++yy) {
        for (int xx = 0; xx < y.w; ++xx) q[yy * y.w + xx] = p[(yy / 2) * x.w + xx / 2];
      }
    }
  }
}

void upsample2_backward(const Tensor& dy, Tensor& dx) {
  dx = Tensor(dy.n, dy.c, dy.h / 2, dy.w / 2);
  for (int i = 0; i < dy.n; ++i) {
    for (int ch = 0; ch < dy.c; ++ch) {
      const double* p = dy.channel(i, ch);
      double* q = dx.channel(i, ch);
      for (int yy = 0; yy < dy.h; ++yy) {
        for (int xx = 0; xx < dy.w; ++xx) q[(yy / 2) * dx.w + xx / 2] += p[yy * dy.w + xx];
      }
    }
  }
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw ShapeError("concat of mismatched tensors");
  Tensor out(a.n, a.c + b.c, a.h, a.w);
  for (int i = 0; i < a.n; ++i) {
    std::copy(a.sample(i), a.sample(i) + a.sample_size(), out.sample(i));
    std::copy(b.sample(i), b.sample(i) + b.sample_size(), out.sample(i) + a.sample_size());
  }
  return out;
}

void split_channels(const Tensor& d, Tensor& da, Tensor& db) {
  for (int i = 0; i < d.n; ++i) {
    std::copy(d.sample(i), d.sample(i) + da.sample_size(), da.sample(i));
    std::copy(d.sample(i) + da.sample_size(), d.sample(i) + d.sample_size(), db.sample(i));
  }
}

}  // namespace trajtta::nn
