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
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajtta/image.hpp"
#include "trajtta/modulation.hpp"
#include "trajtta/nn.hpp"

namespace trajtta {

struct ArchConfig {
  int height = 64;
  int width = 64;
  int in_channels = 1;
  int num_classes = 4;
  int base_width = 8;
  int depth = 3;
  nn::NormKind norm = nn::NormKind::kBatch;
  double eps = 1e-5;
  double momentum = 0.1;

  // Throws ConfigError for C < 2 or a depth that pools below 1x1.
  void validate() const;
  nlohmann::json to_json() const;
  static ArchConfig from_json(const nlohmann::json& j);

  bool operator==(const ArchConfig&) const = default;
};

nn::NormKind parse_norm_kind(const std::string& name);
std::string to_string(nn::NormKind kind);

// Pixel-major class scores: entry [p * C + c].
struct ProbMap {
  int pixels = 0;
  int num_classes = 0;
  std::vector<double> logits;
  std::vector<double> probs;

  static ProbMap from_logits(int pixels, int num_classes, std::vector<double> logits);
  // Row-wise argmax; lowest class index wins ties.
  std::vector<std::int32_t> argmax() const;
  void validate(double tol = 1e-6) const;
};

// Row-wise softmax of pixel-major logits.
std::vector<double> softmax_rows(std::span<const double> logits, int num_classes);
std::vector<std::int32_t> argmax_rows(std::span<const double> probs, int num_classes);
// Pixel-major ProbMap of one sample of NCHW logits.
ProbMap prob_map_from_tensor(const nn::Tensor& logits, int sample = 0);

struct NormLayerState {
  std::string layer_id;
  int channels = 0;
  std::vector<double> running_mean;
  std::vector<double> running_std;
  std::vector<double> affine_scale;
  std::vector<double> affine_shift;
};

// theta holds every trainable parameter; running statistics are kept
// alongside, one contiguous block per norm layer.
struct BackboneWeights {
  std::vector<double> theta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool frozen = false;

  std::uint64_t checksum() const;
};

// Small encoder-decoder segmentation network. Each level holds two
// conv3x3 -> norm -> [modulation] -> ReLU blocks; the decoder upsamples and
// concatenates the matching encoder skip. A 1x1 head emits C logits.
class Backbone {
 public:
  struct BlockCache {
    nn::Tensor input;
    nn::Tensor conv_out;
    nn::Tensor xhat;
    nn::Tensor normed;     // norm output before modulation
    nn::Tensor modulated;  // after modulation, before ReLU; empty if unmodulated
    nn::Tensor output;
    nn::NormStats stats;

    const nn::Tensor& pre_activation() const { return modulated.data.empty() ? normed : modulated; }
  };

  struct Cache {
    bool training = false;
    const ModulationSet* modulation = nullptr;
    std::vector<BlockCache> blocks;
    std::vector<std::vector<std::int32_t>> pool_argmax;
    nn::Tensor head_input;
    nn::Tensor logits;
  };

  static Backbone build(const ArchConfig& arch, std::uint64_t seed = 0);
  static Backbone from_weights(const ArchConfig& arch, BackboneWeights weights);

  const ArchConfig& arch() const { return arch_; }
  const NormRegistry& registry() const { return registry_; }
  const BackboneWeights& weights() const { return weights_; }
  std::size_t num_parameters() const { return weights_.theta.size(); }
  NormLayerState norm_state(std::size_t layer) const;

  bool frozen() const { return weights_.frozen; }
  void freeze() { weights_.frozen = true; }
  // Throws ArgumentError when frozen.
  std::span<double> mutable_theta();

  // Evaluation mode: running statistics are read, never written. With no
  // modulation (or an identity one applied literally) the result is the
  // frozen network's output.
  ProbMap forward(const Image& image, const ModulationSet* modulation = nullptr) const;
  nn::Tensor infer(const nn::Tensor& x, const ModulationSet* modulation, Cache* cache) const;

  // Training mode with batch statistics; updates running statistics.
  nn::Tensor train_forward(const nn::Tensor& x, Cache& cache);

  // Backpropagates dlogits. Accumulates into dtheta when non-empty and into
  // dmod (shaped like the registry) when non-null.
  void backward(const Cache& cache, const nn::Tensor& dlogits, std::span<double> dtheta,
                ModulationSet* dmod) const;

  nn::Tensor image_tensor(const Image& image) const;
  nn::Tensor batch_tensor(std::span<const Image> images) const;

 private:
  struct BlockSpec {
    int cin = 0;
    int cout = 0;
    std::size_t conv_offset = 0;
    std::size_t scale_offset = 0;
    std::size_t shift_offset = 0;
    std::size_t stat_offset = 0;
  };

  Backbone() = default;
  void layout();
  nn::Tensor run(const nn::Tensor& x, bool training, const ModulationSet* modulation,
                 Cache* cache) const;
  nn::Tensor run_block(std::size_t b, const nn::Tensor& x, bool training,
                       const ModulationSet* modulation, BlockCache* cache) const;
  nn::Tensor block_backward(std::size_t b, const BlockCache& cache, nn::Tensor dout,
                            bool training, bool need_dx, std::span<double> dtheta,
                            const ModulationSet* modulation, ModulationSet* dmod) const;

  ArchConfig arch_;
  NormRegistry registry_;
  BackboneWeights weights_;
  std::vector<BlockSpec> blocks_;
  std::size_t head_weight_offset_ = 0;
  std::size_t head_bias_offset_ = 0;
};

void save_backbone(const std::filesystem::path& path, const Backbone& backbone);
Backbone load_backbone(const std::filesystem::path& path);

}  // namespace trajtta
