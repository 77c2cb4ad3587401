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

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "trajtta/backbone.hpp"
#include "trajtta/errors.hpp"
#include "trajtta/metrics.hpp"
#include "trajtta/modulation.hpp"
#include "trajtta/train.hpp"
#include "trajtta/volume_io.hpp"

namespace trajtta {
namespace {

using testing::Gen;
using testing::rel_err;
using testing::scratch_dir;
using testing::tiny_arch;

// Weighted logit sum: a linear probe whose gradient is the weight tensor.
double probe(const nn::Tensor& logits, const nn::Tensor& w) {
  double s = 0.0;
  for (std::size_t k = 0; k < logits.data.size(); ++k) s += logits.data[k] * w.data[k];
  return s;
}

nn::Tensor random_like(Gen& g, const nn::Tensor& t) {
  nn::Tensor out(t.n, t.c, t.h, t.w);
  for (double& v : out.data) v = g.normal();
  return out;
}

ModulationSet random_modulation(Gen& g, const NormRegistry& reg, double sd) {
  ModulationSet m = identity_modulation(reg);
  for (auto& l : m.layers) {
    for (double& v : l.gamma) v = g.normal(sd);
    for (double& v : l.beta) v = g.normal(sd);
  }
  return m;
}

TEST(Arch, DefaultRegistryMatchesTopology) {
  const Backbone net = Backbone::build(ArchConfig{});
  const ArchConfig a;
  // Two norms per encoder level plus two per decoder level.
  const std::size_t expected = 2 * static_cast<std::size_t>(a.depth) + 2 * (a.depth - 1);
  EXPECT_EQ(net.registry().size(), expected);
  EXPECT_GE(net.registry().size(), 6u);
  EXPECT_EQ(net.registry().entries.front().layer_id, "enc0.norm1");
  EXPECT_EQ(net.registry().entries.back().layer_id, "dec0.norm2");
  EXPECT_NO_THROW(net.registry().validate());
}

TEST(Arch, InvalidConfigsAreConfigErrors) {
  ArchConfig a;
  a.num_classes = 1;
  EXPECT_THROW(Backbone::build(a), ConfigError);
  a = ArchConfig{};
  a.height = 8;
  a.width = 8;
  a.depth = 5;
  EXPECT_THROW(Backbone::build(a), ConfigError);
  EXPECT_THROW(parse_norm_kind("group"), ConfigError);
}

TEST(Forward, ZeroImageGivesValidProbabilities) {
  const Backbone net = testing::randomized_backbone(ArchConfig{}, 1);
  const ProbMap p = net.forward(Image(64, 64));
  EXPECT_EQ(p.pixels, 64 * 64);
  EXPECT_EQ(p.num_classes, 4);
  for (const double v : p.logits) ASSERT_TRUE(std::isfinite(v));
  EXPECT_NO_THROW(p.validate(1e-6));
}

TEST(Forward, RowsSumToOneForRandomInputs) {
  Gen g(2);
  const Backbone net = testing::randomized_backbone(tiny_arch(4), 2);
  for (int draw = 0; draw < 50; ++draw) {
    const ProbMap p = net.forward(g.image(8, 8, g.uniform(0.1, 50.0)));
    for (int px = 0; px < p.pixels; ++px) {
      double s = 0.0;
      for (int c = 0; c < p.num_classes; ++c) {
        const double v = p.probs[static_cast<std::size_t>(px) * 4 + c];
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
        s += v;
      }
      ASSERT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Forward, IdentityModulationIsBitIdentical) {
  Gen g(3);
  const Backbone net = testing::randomized_backbone(ArchConfig{}, 3);
  const Image img = g.image(64, 64);
  const ModulationSet id = identity_modulation(net.registry());
  EXPECT_EQ(net.forward(img).logits, net.forward(img, &id).logits);
}

TEST(Forward, LnTwoScaleDoublesNormalizedActivations) {
  Gen g(4);
  const Backbone net = testing::randomized_backbone(tiny_arch(), 4);
  ModulationSet mod = identity_modulation(net.registry());
  for (double& v : mod.layers[1].gamma) v = std::log(2.0);
  Backbone::Cache cache;
  net.infer(net.image_tensor(g.image(8, 8)), &mod, &cache);
  const auto& block = cache.blocks[1];
  ASSERT_EQ(block.modulated.data.size(), block.normed.data.size());
  for (std::size_t k = 0; k < block.normed.data.size(); ++k) {
    ASSERT_EQ(block.modulated.data[k], 2.0 * block.normed.data[k]);
  }
}

TEST(Forward, EvalNormUsesRunningStatistics) {
  Gen g(5);
  const Backbone net = testing::randomized_backbone(tiny_arch(), 5);
  Backbone::Cache cache;
  net.infer(net.image_tensor(g.image(8, 8)), nullptr, &cache);
  for (std::size_t l = 0; l < net.registry().size(); ++l) {
    const NormLayerState st = net.norm_state(l);
    const auto& b = cache.blocks[l];
    const std::size_t plane = b.conv_out.plane();
    for (int c = 0; c < st.channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const double x = b.conv_out.channel(0, c)[p];
        const double want =
            st.affine_scale[c] * (x - st.running_mean[c]) / st.running_std[c] + st.affine_shift[c];
        ASSERT_NEAR(b.normed.channel(0, c)[p], want, 1e-10);
      }
    }
  }
}

TEST(Forward, RunningStatisticsUnchangedByInference) {
  Gen g(6);
  const Backbone net = testing::randomized_backbone(tiny_arch(), 6);
  const BackboneWeights before = net.weights();
  const ModulationSet mod = random_modulation(g, net.registry(), 0.3);
  for (int i = 0; i < 20; ++i) net.forward(g.image(8, 8), i % 2 ? &mod : nullptr);
  EXPECT_EQ(net.weights().running_mean, before.running_mean);
  EXPECT_EQ(net.weights().running_var, before.running_var);
  EXPECT_EQ(net.weights().theta, before.theta);
}

TEST(Forward, MismatchedModulationIsShapeError) {
  const Backbone net = testing::randomized_backbone(tiny_arch(), 7);
  ModulationSet mod = identity_modulation(net.registry());
  mod.layers.pop_back();
  EXPECT_THROW(net.forward(Image(8, 8), &mod), ShapeError);
  mod = identity_modulation(net.registry());
  mod.layers[0].layer_id = "enc9.norm1";
  EXPECT_THROW(net.forward(Image(8, 8), &mod), ShapeError);
  mod = identity_modulation(net.registry());
  mod.layers[0].gamma.push_back(0.0);
  EXPECT_THROW(net.forward(Image(8, 8), &mod), ShapeError);
  EXPECT_THROW(net.forward(Image(4, 8)), ShapeError);
}

TEST(Forward, ArgmaxTiesFavourLowestClass) {
  const ProbMap p = ProbMap::from_logits(2, 3, {1.0, 1.0, 0.0, 0.0, 2.0, 2.0});
  EXPECT_EQ(p.argmax(), (std::vector<std::int32_t>{0, 1}));
}

TEST(Backward, ModulationGradientMatchesFiniteDifferences) {
  Gen g(8);
  const Backbone net = testing::randomized_backbone(tiny_arch(), 8);
  const nn::Tensor x = net.image_tensor(g.image(8, 8));
  const ModulationSet mod = random_modulation(g, net.registry(), 0.2);
  Backbone::Cache cache;
  const nn::Tensor logits = net.infer(x, &mod, &cache);
  const nn::Tensor w = random_like(g, logits);
  ModulationSet dmod = identity_modulation(net.registry());
  net.backward(cache, w, {}, &dmod);
  const double h = 1e-6;
  for (std::size_t l = 0; l < mod.layers.size(); ++l) {
    for (std::size_t c = 0; c < mod.layers[l].gamma.size(); ++c) {
      for (int which = 0; which < 2; ++which) {
        ModulationSet mp = mod;
        ModulationSet mm = mod;
        auto& vp = which ? mp.layers[l].beta[c] : mp.layers[l].gamma[c];
        auto& vm = which ? mm.layers[l].beta[c] : mm.layers[l].gamma[c];
        vp += h;
        vm -= h;
        const double fd = (probe(net.infer(x, &mp, nullptr), w) -
                           probe(net.infer(x, &mm, nullptr), w)) / (2.0 * h);
        const double an = which ? dmod.layers[l].beta[c] : dmod.layers[l].gamma[c];
        EXPECT_LT(rel_err(an, fd, 1e-4), 1e-5) << "layer " << l << " ch " << c << " " << which;
      }
    }
  }
}

TEST(Backward, TrainingThetaGradientMatchesFiniteDifferences) {
  Gen g(9);
  ArchConfig arch = tiny_arch();
  Backbone net = Backbone::build(arch, 9);
  std::vector<Image> imgs{g.image(8, 8), g.image(8, 8)};
  const nn::Tensor x = net.batch_tensor(imgs);
  Backbone::Cache cache;
  const nn::Tensor logits = net.train_forward(x, cache);
  const nn::Tensor w = random_like(g, logits);
  std::vector<double> dtheta(net.num_parameters(), 0.0);
  net.backward(cache, w, dtheta, nullptr);
  const double h = 1e-6;
  const std::size_t n = net.num_parameters();
  for (std::size_t k = 0; k < n; k += std::max<std::size_t>(1, n / 60)) {
    auto theta = net.mutable_theta();
    const double orig = theta[k];
    theta[k] = orig + h;
    Backbone::Cache c1;
    const double lp = probe(net.train_forward(x, c1), w);
    theta[k] = orig - h;
    Backbone::Cache c2;
    const double lm = probe(net.train_forward(x, c2), w);
    theta[k] = orig;
    EXPECT_LT(rel_err(dtheta[k], (lp - lm) / (2.0 * h), 1e-4), 1e-5) << "theta " << k;
  }
}

TEST(Backward, ModulationOnlyPassLeavesThetaGradientUntouched) {
  Gen g(10);
  const Backbone net = testing::randomized_backbone(tiny_arch(), 10);
  const ModulationSet mod = random_modulation(g, net.registry(), 0.1);
  Backbone::Cache cache;
  const nn::Tensor logits = net.infer(net.image_tensor(g.image(8, 8)), &mod, &cache);
  ModulationSet dmod = identity_modulation(net.registry());
  net.backward(cache, random_like(g, logits), {}, &dmod);
  EXPECT_FALSE(dmod.is_identity());
}

TEST(Weights, FrozenThetaCannotBeMutated) {
  Backbone net = testing::randomized_backbone(tiny_arch(), 11);
  EXPECT_TRUE(net.frozen());
  EXPECT_THROW(net.mutable_theta(), ArgumentError);
}

TEST(Weights, CheckpointRoundTripIsExact) {
  const auto dir = scratch_dir("backbone_ckpt");
  const Backbone net = testing::randomized_backbone(tiny_arch(), 12);
  save_backbone(dir / "b.ckpt", net);
  const Backbone back = load_backbone(dir / "b.ckpt");
  EXPECT_EQ(back.arch(), net.arch());
  EXPECT_EQ(back.registry(), net.registry());
  EXPECT_EQ(back.weights().theta, net.weights().theta);
  EXPECT_EQ(back.weights().checksum(), net.weights().checksum());
  EXPECT_TRUE(back.frozen());
  std::filesystem::resize_file(dir / "b.ckpt", 100);
  EXPECT_THROW(load_backbone(dir / "b.ckpt"), IoError);
}

TEST(Weights, LayerNormVariantRuns) {
  ArchConfig a = tiny_arch();
  a.norm = nn::NormKind::kLayer;
  const Backbone net = testing::randomized_backbone(a, 13);
  EXPECT_NO_THROW(net.forward(Image(8, 8, 0.5)).validate());
}

struct SmallCase {
  std::vector<Image> images;
  std::vector<SegmentationMask> masks;
};

SmallCase small_case() {
  PhantomConfig pc;
  pc.height = 16;
  pc.width = 16;
  pc.num_classes = 3;
  pc.min_radius = 2.0;
  pc.max_radius = 4.0;
  pc.absent_probability = 0.0;
  const auto c = generate_synthetic_case(4, pc);
  return {{c.clean}, {c.mask}};
}

ArchConfig small_arch() {
  ArchConfig a;
  a.height = 16;
  a.width = 16;
  a.num_classes = 3;
  a.base_width = 4;
  a.depth = 2;
  return a;
}

TEST(Train, OverfitsSingleCase) {
  const SmallCase data = small_case();
  Backbone net = Backbone::build(small_arch(), 1);
  TrainConfig cfg;
  cfg.steps = 400;
  cfg.batch_size = 2;
  cfg.lr = 1e-2;
  cfg.augment = false;
  const TrainReport report = train_backbone(net, data.images, data.masks, cfg);
  EXPECT_TRUE(net.frozen());
  EXPECT_LT(report.final_loss, report.loss_curve.front().second);
  const auto pred = net.forward(data.images[0]).argmax();
  for (int c = 1; c < 3; ++c) {
    const auto d = dice(std::span<const std::int32_t>(pred),
                        std::span<const std::int32_t>(data.masks[0].labels), c);
    ASSERT_TRUE(d.has_value());
    EXPECT_GE(*d, 0.99) << "class " << c;
  }
}

TEST(Train, ZeroLearningRateLeavesThetaUnchanged) {
  const SmallCase data = small_case();
  Backbone net = Backbone::build(small_arch(), 2);
  const auto theta = net.weights().theta;
  TrainConfig cfg;
  cfg.steps = 5;
  cfg.lr = 0.0;
  cfg.final_lr = 0.0;
  train_backbone(net, data.images, data.masks, cfg);
  EXPECT_EQ(net.weights().theta, theta);
}

TEST(Train, SameSeedIsDeterministic) {
  const SmallCase data = small_case();
  TrainConfig cfg;
  cfg.steps = 5;
  Backbone a = Backbone::build(small_arch(), 3);
  Backbone b = Backbone::build(small_arch(), 3);
  train_backbone(a, data.images, data.masks, cfg);
  train_backbone(b, data.images, data.masks, cfg);
  EXPECT_EQ(a.weights().checksum(), b.weights().checksum());
  // Odd-sized live allocations shift buffer alignment between runs.
  std::vector<std::vector<double>> padding;
  for (std::size_t pad = 1; pad <= 7; ++pad) {
    padding.emplace_back(pad);
    Backbone c = Backbone::build(small_arch(), 3);
    train_backbone(c, data.images, data.masks, cfg);
    EXPECT_EQ(c.weights().checksum(), a.weights().checksum()) << "padding " << pad;
  }
}

TEST(Train, EmptyDatasetIsTrainingError) {
  Backbone net = Backbone::build(small_arch(), 4);
  try {
    train_backbone(net, {}, {}, TrainConfig{});
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.step(), 0);
  }
}

TEST(Train, NonFiniteInputIsTrainingError) {
  SmallCase data = small_case();
  data.images[0].data[0] = std::numeric_limits<double>::infinity();
  Backbone net = Backbone::build(small_arch(), 5);
  TrainConfig cfg;
  cfg.augment = false;
  cfg.steps = 3;
  EXPECT_THROW(train_backbone(net, data.images, data.masks, cfg), DomainError);
}

TEST(Train, DivergenceReportsStepIndex) {
  const SmallCase data = small_case();
  Backbone net = Backbone::build(small_arch(), 6);
  TrainConfig cfg;
  cfg.augment = false;
  cfg.steps = 50;
  cfg.lr = 1e300;
  cfg.final_lr = 1e300;
  try {
    train_backbone(net, data.images, data.masks, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingError& e) {
    EXPECT_GT(e.step(), 0);
    EXPECT_LT(e.step(), 50);
  }
}

}  // namespace
}  // namespace trajtta
