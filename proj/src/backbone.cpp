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

#include "trajtta/backbone.hpp"

#include <cmath>
#include <random>

#include "trajtta/archive.hpp"
#include "trajtta/errors.hpp"

namespace trajtta {

void ArchConfig::validate() const {
  if (num_classes < 2) {
    throw ConfigError("segmentation needs at least 2 classes, got " + std::to_string(num_classes));
  }
  if (height <= 0 || width <= 0 || in_channels <= 0 || base_width <= 0) {
    throw ConfigError("backbone dimensions must be positive");
  }
  if (depth < 1) throw ConfigError("backbone depth must be >= 1");
  const int scale = 1 << (depth - 1);
  if (height % scale != 0 || width % scale != 0) {
    throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(width) +
                      " cannot be pooled " + std::to_string(depth - 1) +
                      " times without collapsing below 1x1");
  }
  if (!(eps > 0.0)) throw ConfigError("norm eps must be positive");
}

nlohmann::json ArchConfig::to_json() const {
  return {{"height", height},         {"width", width}, {"in_channels", in_channels},
          {"num_classes", num_classes}, {"base_width", base_width}, {"depth", depth},
          {"norm", to_string(norm)},   {"eps", eps},     {"momentum", momentum}};
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.height = j.at("height").get<int>();
  a.width = j.at("width").get<int>();
  a.in_channels = j.at("in_channels").get<int>();
  a.num_classes = j.at("num_classes").get<int>();
  a.base_width = j.at("base_width").get<int>();
  a.depth = j.at("depth").get<int>();
  a.norm = parse_norm_kind(j.at("norm").get<std::string>());
  a.eps = j.at("eps").get<double>();
  a.momentum = j.at("momentum").get<double>();
  a.validate();
  return a;
}

nn::NormKind parse_norm_kind(const std::string& name) {
  if (name == "batch") return nn::NormKind::kBatch;
  if (name == "layer") return nn::NormKind::kLayer;
  throw ConfigError("unknown norm kind '" + name + "'");
}

std::string to_string(nn::NormKind kind) { return kind == nn::NormKind::kBatch ? "batch" : "layer"; }

std::vector<double> softmax_rows(std::span<const double> logits, int num_classes) {
  const auto c = static_cast<std::size_t>(num_classes);
  std::vector<double> probs(logits.size());
  for (std::size_t p = 0; p < logits.size() / c; ++p) {
    const double* z = logits.data() + p * c;
    double* q = probs.data() + p * c;
    double mx = z[0];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, z[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      q[k] = std::exp(z[k] - mx);
      sum += q[k];
    }
    for (std::size_t k = 0; k < c; ++k) q[k] /= sum;
  }
  return probs;
}

std::vector<std::int32_t> argmax_rows(std::span<const double> probs, int num_classes) {
  const auto c = static_cast<std::size_t>(num_classes);
  std::vector<std::int32_t> out(probs.size() / c);
  for (std::size_t p = 0; p < out.size(); ++p) {
    const double* q = probs.data() + p * c;
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (q[k] > q[best]) best = k;
    }
    out[p] = static_cast<std::int32_t>(best);
  }
  return out;
}

ProbMap ProbMap::from_logits(int pixels, int num_classes, std::vector<double> logits) {
  ProbMap pm;
  pm.pixels = pixels;
  pm.num_classes = num_classes;
  pm.probs = softmax_rows(logits, num_classes);
  pm.logits = std::move(logits);
  return pm;
}

std::vector<std::int32_t> ProbMap::argmax() const { return argmax_rows(probs, num_classes); }

void ProbMap::validate(double tol) const {
  const auto c = static_cast<std::size_t>(num_classes);
  if (probs.size() != static_cast<std::size_t>(pixels) * c) {
    throw ShapeError("probability map size mismatch");
  }
  for (std::size_t p = 0; p < static_cast<std::size_t>(pixels); ++p) {
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double v = probs[p * c + k];
      if (!(v >= 0.0 && v <= 1.0)) throw DomainError("probability outside [0, 1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol) throw DomainError("probability row does not sum to 1");
  }
}

std::uint64_t BackboneWeights::checksum() const {
  std::uint64_t h = fnv1a64(theta);
  h = fnv1a64(running_mean, h);
  return fnv1a64(running_var, h);
}

void Backbone::layout() {
  arch_.validate();
  registry_.entries.clear();
  blocks_.clear();
  std::size_t offset = 0;
  std::size_t stat = 0;
  auto add_block = [&](const std::string& id, int cin, int cout) {
    BlockSpec s;
    s.cin = cin;
    s.cout = cout;
    s.conv_offset = offset;
    offset += static_cast<std::size_t>(cin) * cout * 9;
    s.scale_offset = offset;
    offset += static_cast<std::size_t>(cout);
    s.shift_offset = offset;
    offset += static_cast<std::size_t>(cout);
    s.stat_offset = stat;
    stat += static_cast<std::size_t>(cout);
    blocks_.push_back(s);
    registry_.entries.push_back({id, cout});
  };
  auto width = [&](int level) { return arch_.base_width << level; };

  for (int l = 0; l < arch_.depth; ++l) {
    const int cin = l == 0 ? arch_.in_channels : width(l - 1);
    add_block("enc" + std::to_string(l) + ".norm1", cin, width(l));
    add_block("enc" + std::to_string(l) + ".norm2", width(l), width(l));
  }
  for (int l = arch_.depth - 2; l >= 0; --l) {
    add_block("dec" + std::to_string(l) + ".norm1", width(l + 1) + width(l), width(l));
    add_block("dec" + std::to_string(l) + ".norm2", width(l), width(l));
  }
  head_weight_offset_ = offset;
  offset += static_cast<std::size_t>(arch_.num_classes) * width(0);
  head_bias_offset_ = offset;
  offset += static_cast<std::size_t>(arch_.num_classes);

  weights_.theta.resize(offset, 0.0);
  weights_.running_mean.resize(stat, 0.0);
  weights_.running_var.resize(stat, 1.0);
}

Backbone Backbone::build(const ArchConfig& arch, std::uint64_t seed) {
  Backbone net;
  net.arch_ = arch;
  net.layout();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto& theta = net.weights_.theta;
  for (const auto& s : net.blocks_) {
    const double std_dev = std::sqrt(2.0 / (s.cin * 9.0));
    for (std::size_t k = 0; k < static_cast<std::size_t>(s.cin) * s.cout * 9; ++k) {
      theta[s.conv_offset + k] = std_dev * normal(rng);
    }
    for (int c = 0; c < s.cout; ++c) theta[s.scale_offset + static_cast<std::size_t>(c)] = 1.0;
  }
  const double head_std = std::sqrt(1.0 / arch.base_width);
  for (std::size_t k = net.head_weight_offset_; k < net.head_bias_offset_; ++k) {
    theta[k] = head_std * normal(rng);
  }
  return net;
}

Backbone Backbone::from_weights(const ArchConfig& arch, BackboneWeights weights) {
  Backbone net;
  net.arch_ = arch;
  net.layout();
  if (weights.theta.size() != net.weights_.theta.size() ||
      weights.running_mean.size() != net.weights_.running_mean.size() ||
      weights.running_var.size() != net.weights_.running_var.size()) {
    throw ShapeError("weights do not match the architecture (" +
                     std::to_string(weights.theta.size()) + " vs " +
                     std::to_string(net.weights_.theta.size()) + " parameters)");
  }
  net.weights_ = std::move(weights);
  return net;
}

NormLayerState Backbone::norm_state(std::size_t layer) const {
  const auto& s = blocks_.at(layer);
  NormLayerState st;
  st.layer_id = registry_.entries[layer].layer_id;
  st.channels = s.cout;
  const auto c = static_cast<std::size_t>(s.cout);
  const auto& th = weights_.theta;
  st.running_mean.assign(weights_.running_mean.begin() + static_cast<std::ptrdiff_t>(s.stat_offset),
                         weights_.running_mean.begin() + static_cast<std::ptrdiff_t>(s.stat_offset + c));
  for (std::size_t k = 0; k < c; ++k) {
    st.running_std.push_back(std::sqrt(weights_.running_var[s.stat_offset + k] + arch_.eps));
  }
  st.affine_scale.assign(th.begin() + static_cast<std::ptrdiff_t>(s.scale_offset),
                         th.begin() + static_cast<std::ptrdiff_t>(s.scale_offset + c));
  st.affine_shift.assign(th.begin() + static_cast<std::ptrdiff_t>(s.shift_offset),
                         th.begin() + static_cast<std::ptrdiff_t>(s.shift_offset + c));
  return st;
}

std::span<double> Backbone::mutable_theta() {
  if (weights_.frozen) throw ArgumentError("backbone weights are frozen");
  return weights_.theta;
}

nn::Tensor Backbone::image_tensor(const Image& image) const {
  return batch_tensor(std::span<const Image>(&image, 1));
}

nn::Tensor Backbone::batch_tensor(std::span<const Image> images) const {
  nn::Tensor t(static_cast<int>(images.size()), arch_.in_channels, arch_.height, arch_.width);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    if (img.height != arch_.height || img.width != arch_.width) {
      throw ShapeError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                       " does not match backbone input " + std::to_string(arch_.height) + "x" +
                       std::to_string(arch_.width));
    }
    if (img.size() != t.plane()) throw ShapeError("image payload size mismatch");
    for (const double v : img.data) {
      if (!std::isfinite(v)) throw DomainError("backbone input contains non-finite values");
    }
    for (int ch = 0; ch < arch_.in_channels; ++ch) {
      std::copy(img.data.begin(), img.data.end(), t.channel(static_cast<int>(i), ch));
    }
  }
  return t;
}

nn::Tensor Backbone::run_block(std::size_t b, const nn::Tensor& x, bool training,
                               const ModulationSet* modulation, BlockCache* cache) const {
  BlockCache local;
  BlockCache& bc = cache != nullptr ? *cache : local;
  const auto& s = blocks_[b];
  const auto& th = weights_.theta;
  const auto c = static_cast<std::size_t>(s.cout);
  const std::span<const double> theta(th);

  nn::conv_forward(x, theta.subspan(s.conv_offset, static_cast<std::size_t>(s.cin) * c * 9), {},
                   s.cout, 3, bc.conv_out);
  nn::norm_forward(arch_.norm, training, bc.conv_out, theta.subspan(s.scale_offset, c),
                   theta.subspan(s.shift_offset, c),
                   std::span<const double>(weights_.running_mean).subspan(s.stat_offset, c),
                   std::span<const double>(weights_.running_var).subspan(s.stat_offset, c),
                   arch_.eps, bc.xhat, bc.normed, bc.stats);
  if (modulation != nullptr) {
    const auto& lm = modulation->layers[b];
    bc.modulated = apply_modulation(bc.normed, lm.gamma, lm.beta);
  } else {
    bc.modulated = nn::Tensor();
  }
  nn::relu_forward(bc.pre_activation(), bc.output);
  if (cache != nullptr) {
    bc.input = x;
    return bc.output;
  }
  return std::move(bc.output);
}

nn::Tensor Backbone::run(const nn::Tensor& x, bool training, const ModulationSet* modulation,
                         Cache* cache) const {
  if (modulation != nullptr) modulation->check_against(registry_);
  const int depth = arch_.depth;
  if (cache != nullptr) {
    cache->training = training;
    cache->modulation = modulation;
    cache->blocks.assign(blocks_.size(), BlockCache());
    cache->pool_argmax.assign(static_cast<std::size_t>(depth - 1), {});
  }
  auto block_cache = [&](std::size_t b) { return cache != nullptr ? &cache->blocks[b] : nullptr; };

  std::size_t b = 0;
  nn::Tensor cur = x;
  std::vector<nn::Tensor> skips(static_cast<std::size_t>(depth - 1));
  for (int l = 0; l < depth; ++l) {
    cur = run_block(b, cur, training, modulation, block_cache(b));
    ++b;
    cur = run_block(b, cur, training, modulation, block_cache(b));
    ++b;
    if (l < depth - 1) {
      std::vector<std::int32_t> argmax;
      nn::Tensor pooled;
      nn::maxpool2_forward(cur, pooled, argmax);
      skips[static_cast<std::size_t>(l)] = std::move(cur);
      if (cache != nullptr) cache->pool_argmax[static_cast<std::size_t>(l)] = std::move(argmax);
      cur = std::move(pooled);
    }
  }
  for (int l = depth - 2; l >= 0; --l) {
    nn::Tensor up;
    nn::upsample2_forward(cur, up);
    cur = nn::concat_channels(up, skips[static_cast<std::size_t>(l)]);
    cur = run_block(b, cur, training, modulation, block_cache(b));
    ++b;
    cur = run_block(b, cur, training, modulation, block_cache(b));
    ++b;
  }

  const std::span<const double> theta(weights_.theta);
  nn::Tensor logits;
  nn::conv_forward(cur, theta.subspan(head_weight_offset_, head_bias_offset_ - head_weight_offset_),
                   theta.subspan(head_bias_offset_, static_cast<std::size_t>(arch_.num_classes)),
                   arch_.num_classes, 1, logits);
  if (cache != nullptr) {
    cache->head_input = std::move(cur);
    cache->logits = logits;
  }
  return logits;
}

nn::Tensor Backbone::infer(const nn::Tensor& x, const ModulationSet* modulation,
                           Cache* cache) const {
  return run(x, false, modulation, cache);
}

nn::Tensor Backbone::train_forward(const nn::Tensor& x, Cache& cache) {
  if (weights_.frozen) throw ArgumentError("cannot train a frozen backbone");
  nn::Tensor logits = run(x, true, nullptr, &cache);
  if (arch_.norm == nn::NormKind::kBatch) {
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& s = blocks_[b];
      const auto& bc = cache.blocks[b];
      const double count = static_cast<double>(bc.conv_out.plane()) * bc.conv_out.n;
      const double correction = count > 1.0 ? count / (count - 1.0) : 1.0;
      for (std::size_t k = 0; k < static_cast<std::size_t>(s.cout); ++k) {
        double& rm = weights_.running_mean[s.stat_offset + k];
        double& rv = weights_.running_var[s.stat_offset + k];
        rm = (1.0 - arch_.momentum) * rm + arch_.momentum * bc.stats.mean[k];
        rv = (1.0 - arch_.momentum) * rv + arch_.momentum * bc.stats.var[k] * correction;
      }
    }
  }
  return logits;
}

nn::Tensor Backbone::block_backward(std::size_t b, const BlockCache& bc, nn::Tensor dout,
                                    bool training, bool need_dx, std::span<double> dtheta,
                                    const ModulationSet* modulation, ModulationSet* dmod) const {
  const auto& s = blocks_[b];
  const auto c = static_cast<std::size_t>(s.cout);
  const std::size_t hw = bc.normed.plane();
  nn::relu_backward(bc.pre_activation(), dout);

  if (modulation != nullptr || dmod != nullptr) {
    for (int i = 0; i < dout.n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double gamma = modulation != nullptr ? modulation->layers[b].gamma[ch] : 0.0;
        const double scale = std::exp(gamma);
        double* g = dout.channel(i, static_cast<int>(ch));
        if (dmod != nullptr) {
          const double* xbar = bc.normed.channel(i, static_cast<int>(ch));
          double sum_gx = 0.0;
          double sum_g = 0.0;
          for (std::size_t k = 0; k < hw; ++k) {
            sum_gx += g[k] * xbar[k];
            sum_g += g[k];
          }
          dmod->layers[b].gamma[ch] += scale * sum_gx;
          dmod->layers[b].beta[ch] += sum_g;
        }
        if (modulation != nullptr) {
          for (std::size_t k = 0; k < hw; ++k) g[k] *= scale;
        }
      }
    }
  }

  const std::span<const double> theta(weights_.theta);
  const bool want_weights = !dtheta.empty();
  nn::Tensor dconv;
  nn::norm_backward(arch_.norm, training, bc.xhat, dout, theta.subspan(s.scale_offset, c), bc.stats,
                    dconv, want_weights ? dtheta.subspan(s.scale_offset, c) : std::span<double>(),
                    want_weights ? dtheta.subspan(s.shift_offset, c) : std::span<double>());
  nn::Tensor dx;
  const std::size_t conv_size = static_cast<std::size_t>(s.cin) * c * 9;
  nn::conv_backward(bc.input, dconv, theta.subspan(s.conv_offset, conv_size), 3,
                    need_dx ? &dx : nullptr,
                    want_weights ? dtheta.subspan(s.conv_offset, conv_size) : std::span<double>(),
                    {});
  return dx;
}

void Backbone::backward(const Cache& cache, const nn::Tensor& dlogits, std::span<double> dtheta,
                        ModulationSet* dmod) const {
  if (!dtheta.empty() && dtheta.size() != weights_.theta.size()) {
    throw ShapeError("dtheta has the wrong size");
  }
  if (dmod != nullptr) dmod->check_against(registry_);
  const bool want_weights = !dtheta.empty();
  const std::span<const double> theta(weights_.theta);
  const std::size_t head_w = head_bias_offset_ - head_weight_offset_;
  const auto n_cls = static_cast<std::size_t>(arch_.num_classes);

  nn::Tensor d;
  nn::conv_backward(cache.head_input, dlogits, theta.subspan(head_weight_offset_, head_w), 1, &d,
                    want_weights ? dtheta.subspan(head_weight_offset_, head_w) : std::span<double>(),
                    want_weights ? dtheta.subspan(head_bias_offset_, n_cls) : std::span<double>());

  const int depth = arch_.depth;
  const ModulationSet* mod = cache.modulation;
  std::size_t b = blocks_.size();
  auto back = [&](nn::Tensor grad, bool need_dx) {
    --b;
    return block_backward(b, cache.blocks[b], std::move(grad), cache.training, need_dx, dtheta, mod,
                          dmod);
  };

  std::vector<nn::Tensor> dskips(static_cast<std::size_t>(depth - 1));
  for (int l = 0; l <= depth - 2; ++l) {
    d = back(std::move(d), true);
    d = back(std::move(d), true);
    const auto& skip_shape = cache.blocks[static_cast<std::size_t>(2 * l + 1)].output;
    nn::Tensor dup(d.n, d.c - skip_shape.c, d.h, d.w);
    nn::Tensor dskip(d.n, skip_shape.c, d.h, d.w);
    nn::split_channels(d, dup, dskip);
    dskips[static_cast<std::size_t>(l)] = std::move(dskip);
    nn::upsample2_backward(dup, d);
  }
  for (int l = depth - 1; l >= 0; --l) {
    if (l < depth - 1) {
      nn::Tensor dpre;
      nn::maxpool2_backward(d, cache.pool_argmax[static_cast<std::size_t>(l)], dpre);
      const auto& ds = dskips[static_cast<std::size_t>(l)];
      for (std::size_t k = 0; k < dpre.data.size(); ++k) dpre.data[k] += ds.data[k];
      d = std::move(dpre);
    }
    d = back(std::move(d), true);
    d = back(std::move(d), l > 0);
  }
}

ProbMap prob_map_from_tensor(const nn::Tensor& logits, int sample) {
  const auto c = static_cast<std::size_t>(logits.c);
  const std::size_t d = logits.plane();
  std::vector<double> flat(d * c);
  for (std::size_t k = 0; k < c; ++k) {
    const double* src = logits.channel(sample, static_cast<int>(k));
    for (std::size_t p = 0; p < d; ++p) flat[p * c + k] = src[p];
  }
  return ProbMap::from_logits(static_cast<int>(d), logits.c, std::move(flat));
}

ProbMap Backbone::forward(const Image& image, const ModulationSet* modulation) const {
  return prob_map_from_tensor(infer(image_tensor(image), modulation, nullptr));
}

void save_backbone(const std::filesystem::path& path, const Backbone& backbone) {
  const auto& w = backbone.weights();
  nlohmann::json header = {{"kind", "backbone"},
                           {"arch", backbone.arch().to_json()},
                           {"registry", backbone.registry().to_json()},
                           {"frozen", w.frozen},
                           {"checksum", to_hex(w.checksum())}};
  write_archive(path, header,
                {{"theta", w.theta}, {"running_mean", w.running_mean}, {"running_var", w.running_var}});
}

Backbone load_backbone(const std::filesystem::path& path) {
  const Archive ar = read_archive(path);
  try {
    if (ar.header.at("kind").get<std::string>() != "backbone") {
      throw IoError(path.string(), "not a backbone checkpoint");
    }
    const ArchConfig arch = ArchConfig::from_json(ar.header.at("arch"));
    BackboneWeights w;
    w.theta = ar.blob("theta");
    w.running_mean = ar.blob("running_mean");
    w.running_var = ar.blob("running_var");
    w.frozen = ar.header.at("frozen").get<bool>();
    if (to_hex(w.checksum()) != ar.header.at("checksum").get<std::string>()) {
      throw IoError(path.string(), "checksum mismatch");
    }
    Backbone net = Backbone::from_weights(arch, std::move(w));
    if (NormRegistry::from_json(ar.header.at("registry")) != net.registry()) {
      throw IoError(path.string(), "embedded registry does not match the architecture");
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string(), std::string("corrupt header: ") + e.what());
  }
}

}  // namespace trajtta
