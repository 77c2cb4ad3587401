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
#include "trajtta/modulation.hpp"
#include "trajtta/modulator.hpp"

namespace trajtta {
namespace {

using testing::Gen;
using testing::rel_err;
using testing::scratch_dir;
using testing::tiny_arch;

NormRegistry small_registry() {
  NormRegistry r;
  r.entries = {{"a", 2}, {"b", 3}, {"c", 1}};
  return r;
}

void randomize(Modulator& m, Gen& g, double sd) {
  for (double& v : m.params()) v = g.normal(sd);
}

TEST(Embedding, ZeroTimeIsSinesThenCosines) {
  EXPECT_EQ(sinusoidal_embedding(0.0, 4, 10.0), (std::vector<double>{0.0, 0.0, 1.0, 1.0}));
}

TEST(Embedding, MatchesClosedForm) {
  const auto e = sinusoidal_embedding(0.7, 6, 10.0);
  for (int k = 0; k < 3; ++k) {
    const double w = std::pow(10.0, -2.0 * k / 6.0);
    EXPECT_DOUBLE_EQ(e[k], std::sin(0.7 * w));
    EXPECT_DOUBLE_EQ(e[k + 3], std::cos(0.7 * w));
  }
}

TEST(Embedding, BoundedForAnyTime) {
  Gen g(1);
  for (int draw = 0; draw < 500; ++draw) {
    const int dim = 2 * g.integer(1, 32);
    const auto e = sinusoidal_embedding(g.uniform(-1e4, 1e4), dim, g.uniform(1.0, 1e4));
    ASSERT_EQ(e.size(), static_cast<std::size_t>(dim));
    for (const double v : e) {
      ASSERT_GE(v, -1.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(Embedding, LipschitzInTime) {
  // Each sin/cos pair moves by 2|sin(w d / 2)| <= w |d|, so the embedding
  // distance is bounded by |d| * sqrt(sum_k w_k^2).
  Gen g(2);
  for (int draw = 0; draw < 300; ++draw) {
    const int dim = 2 * g.integer(1, 16);
    const double period = g.uniform(1.0, 1e3);
    double lip = 0.0;
    for (int k = 0; k < dim / 2; ++k) {
      const double w = std::pow(period, -2.0 * k / dim);
      lip += w * w;
    }
    lip = std::sqrt(lip);
    const double t = g.uniform(-5.0, 5.0);
    const double d = g.uniform(-1e-2, 1e-2);
    const auto a = sinusoidal_embedding(t, dim, period);
    const auto b = sinusoidal_embedding(t + d, dim, period);
    double dist = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) dist += (a[k] - b[k]) * (a[k] - b[k]);
    ASSERT_LE(std::sqrt(dist), lip * std::abs(d) * (1.0 + 1e-9) + 1e-15);
  }
}

TEST(Embedding, OddDimensionIsConfigError) {
  EXPECT_THROW(sinusoidal_embedding(0.0, 3, 10.0), ConfigError);
  EXPECT_THROW(sinusoidal_embedding(0.0, 0, 10.0), ConfigError);
}

TEST(Init, HeadsAreExactlyZeroAndOutputIsIdentity) {
  Gen g(3);
  Modulator m = Modulator::init(small_registry(), ModulatorConfig{}, 5);
  for (std::size_t l = 0; l < 3; ++l) {
    for (const double v : m.head_weight(l)) ASSERT_EQ(v, 0.0);
    for (const double v : m.head_bias(l)) ASSERT_EQ(v, 0.0);
  }
  for (int draw = 0; draw < 50; ++draw) {
    const ModulationSet s = m.forward(g.uniform(0.0, 1.0), 1.0);
    EXPECT_TRUE(s.is_identity());
    EXPECT_NO_THROW(s.check_against(small_registry()));
  }
}

TEST(Init, SameSeedSameParameters) {
  const ModulatorConfig cfg;
  EXPECT_EQ(Modulator::init(small_registry(), cfg, 9), Modulator::init(small_registry(), cfg, 9));
  EXPECT_NE(Modulator::init(small_registry(), cfg, 9), Modulator::init(small_registry(), cfg, 10));
}

TEST(Init, DefaultsAndParameterCount) {
  const ModulatorConfig cfg;
  EXPECT_EQ(cfg.emb_dim, 16);
  EXPECT_EQ(cfg.hidden_dim, 64);
  const Modulator m = Modulator::init(small_registry(), cfg, 1);
  const std::size_t trunk = 16 * 64 + 64 + 64 * 64 + 64;
  const std::size_t heads = (2 * 6) * 64 + 2 * 6;
  EXPECT_EQ(m.num_params(), trunk + heads);
}

TEST(Init, EmptyRegistryIsConfigError) {
  EXPECT_THROW(Modulator::init(NormRegistry{}, ModulatorConfig{}, 0), ConfigError);
  ModulatorConfig cfg;
  cfg.emb_dim = 5;
  EXPECT_THROW(Modulator::init(small_registry(), cfg, 0), ConfigError);
}

TEST(Forward, ConstantHeadBiasIgnoresTime) {
  Gen g(4);
  Modulator m = Modulator::init(small_registry(), ModulatorConfig{}, 2);
  auto b = m.head_bias(1);
  for (int c = 0; c < 3; ++c) b[c] = std::log(2.0);
  const ModulationSet s0 = m.forward(0.0, 1.0);
  const ModulationSet s1 = m.forward(g.uniform(0.0, 1.0), 1.0);
  EXPECT_EQ(s0, s1);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(std::exp(s0.layers[1].gamma[c]), 2.0);
    EXPECT_EQ(s0.layers[1].beta[c], 0.0);
  }
  EXPECT_TRUE(s0.layers[0].gamma == std::vector<double>(2, 0.0));
}

TEST(Forward, ConstantHeadDoublesBackboneLayer) {
  Gen g(5);
  const Backbone net = testing::randomized_backbone(tiny_arch(), 5);
  Modulator m = Modulator::init(net.registry(), ModulatorConfig{}, 3);
  for (double& v : m.head_bias(0).first(net.registry().entries[0].channels)) v = std::log(2.0);
  for (const double t : {0.0, 0.4, 1.0}) {
    const ModulationSet s = m.forward(t, 1.0);
    Backbone::Cache cache;
    net.infer(net.image_tensor(g.image(8, 8)), &s, &cache);
    const auto& b = cache.blocks[0];
    for (std::size_t k = 0; k < b.normed.data.size(); ++k) {
      ASSERT_EQ(b.modulated.data[k], 2.0 * b.normed.data[k]);
    }
  }
}

TEST(Forward, IdentityAtInitReproducesBaselineExactly) {
  Gen g(6);
  const Backbone net = testing::randomized_backbone(ArchConfig{}, 6);
  const Modulator m = Modulator::init(net.registry(), ModulatorConfig{}, 4);
  const Image img = g.image(64, 64);
  const ProbMap base = net.forward(img);
  for (const double t : {0.0, 0.3, 1.0}) {
    const ModulationSet s = m.forward(t, 1.0);
    const ProbMap p = net.forward(img, &s);
    EXPECT_EQ(p.logits, base.logits);
    EXPECT_EQ(p.argmax(), base.argmax());
  }
}

TEST(Forward, PureFunctionOfParamsAndTime) {
  Gen g(7);
  Modulator m = Modulator::init(small_registry(), ModulatorConfig{}, 5);
  randomize(m, g, 0.5);
  EXPECT_EQ(m.forward(0.25, 1.0), m.forward(0.25, 1.0));
  EXPECT_NE(m.forward(0.25, 1.0), m.forward(0.5, 1.0));
}

TEST(Forward, NormalizedTimeIsScaleFree) {
  Gen g(8);
  Modulator m = Modulator::init(small_registry(), ModulatorConfig{}, 6);
  randomize(m, g, 0.5);
  const auto a = m.forward(0.3, 1.0);
  const auto b = m.forward(3.0, 10.0);
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    for (std::size_t c = 0; c < a.layers[l].gamma.size(); ++c) {
      EXPECT_NEAR(a.layers[l].gamma[c], b.layers[l].gamma[c], 1e-12);
      EXPECT_NEAR(a.layers[l].beta[c], b.layers[l].beta[c], 1e-12);
    }
  }
}

TEST(Forward, GammaIsClampedAndCounted) {
  Modulator m = Modulator::init(small_registry(), ModulatorConfig{}, 7);
  m.head_bias(1)[0] = 25.0;
  m.head_bias(1)[2] = -25.0;
  int clamps = 0;
  Modulator::Cache cache;
  const ModulationSet s = m.forward(0.5, 1.0, &cache, &clamps);
  EXPECT_EQ(clamps, 2);
  EXPECT_EQ(s.layers[1].gamma[0], 10.0);
  EXPECT_EQ(s.layers[1].gamma[2], -10.0);
  EXPECT_TRUE(std::isfinite(std::exp(s.layers[1].gamma[0])));
  // No gradient flows through a clamped entry.
  ModulationSet d = identity_modulation(small_registry());
  d.layers[1].gamma[0] = 1.0;
  std::vector<double> grad(m.num_params(), 0.0);
  m.backward(cache, d, grad);
  for (const double v : grad) ASSERT_EQ(v, 0.0);
}

TEST(Backward, MatchesCentralDifferences) {
  Gen g(9);
  for (int draw = 0; draw < 3; ++draw) {
    ModulatorConfig cfg;
    cfg.emb_dim = 4;
    cfg.hidden_dim = 5;
    Modulator m = Modulator::init(small_registry(), cfg, draw);
    randomize(m, g, 0.7);
    const double t = g.uniform(0.0, 1.0);
    ModulationSet weights = identity_modulation(small_registry());
    for (auto& l : weights.layers) {
      for (double& v : l.gamma) v = g.normal();
      for (double& v : l.beta) v = g.normal();
    }
    auto objective = [&](const Modulator& mm) {
      const ModulationSet s = mm.forward(t, 1.0);
      double f = 0.0;
      for (std::size_t l = 0; l < s.layers.size(); ++l) {
        for (std::size_t c = 0; c < s.layers[l].gamma.size(); ++c) {
          // Nonlinear in gamma so the exp path is exercised.
          f += weights.layers[l].gamma[c] * std::exp(s.layers[l].gamma[c]) +
               weights.layers[l].beta[c] * s.layers[l].beta[c];
        }
      }
      return f;
    };
    Modulator::Cache cache;
    const ModulationSet s = m.forward(t, 1.0, &cache);
    ModulationSet d = weights;
    for (std::size_t l = 0; l < s.layers.size(); ++l) {
      for (std::size_t c = 0; c < s.layers[l].gamma.size(); ++c) {
        d.layers[l].gamma[c] = weights.layers[l].gamma[c] * std::exp(s.layers[l].gamma[c]);
      }
    }
    std::vector<double> grad(m.num_params(), 0.0);
    m.backward(cache, d, grad);
    const double h = 1e-6;
    for (std::size_t k = 0; k < m.num_params(); ++k) {
      Modulator mp = m;
      Modulator mm = m;
      mp.params()[k] += h;
      mm.params()[k] -= h;
      const double fd = (objective(mp) - objective(mm)) / (2.0 * h);
      ASSERT_LT(rel_err(grad[k], fd, 1e-6), 1e-4) << "param " << k;
    }
  }
}

TEST(Backward, Accumulates) {
  Gen g(10);
  Modulator m = Modulator::init(small_registry(), ModulatorConfig{}, 1);
  randomize(m, g, 0.3);
  Modulator::Cache cache;
  m.forward(0.5, 1.0, &cache);
  ModulationSet d = identity_modulation(small_registry());
  for (auto& l : d.layers) {
    for (double& v : l.beta) v = g.normal();
  }
  std::vector<double> once(m.num_params(), 0.0);
  m.backward(cache, d, once);
  std::vector<double> twice = once;
  m.backward(cache, d, twice);
  for (std::size_t k = 0; k < once.size(); ++k) EXPECT_NEAR(twice[k], 2.0 * once[k], 1e-12);
}

TEST(ApplyModulation, ExamplesAndSignStability) {
  nn::Tensor x(1, 2, 1, 2);
  x.data = {3.0, -1.0, 0.5, -2.0};
  const std::vector<double> zero{0.0, 0.0};
  EXPECT_EQ(apply_modulation(x, zero, zero).data, x.data);
  const std::vector<double> ln2{std::log(2.0), std::log(2.0)};
  const std::vector<double> one{1.0, 1.0};
  EXPECT_DOUBLE_EQ(apply_modulation(x, ln2, one).data[0], 7.0);

  Gen g(11);
  for (int draw = 0; draw < 200; ++draw) {
    const std::vector<double> gamma{g.uniform(-10.0, 10.0), g.uniform(-10.0, 10.0)};
    const nn::Tensor y = apply_modulation(x, gamma, zero);
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      ASSERT_EQ(std::signbit(y.data[k]), std::signbit(x.data[k]));
    }
  }
  EXPECT_THROW(apply_modulation(x, std::vector<double>{0.0}, zero), ShapeError);
}

TEST(Persistence, RoundTripAndRegistryCheck) {
  Gen g(12);
  const auto dir = scratch_dir("modulator_io");
  Modulator m = Modulator::init(small_registry(), ModulatorConfig{}, 1);
  randomize(m, g, 0.2);
  save_modulator(dir / "m.bin", m);
  EXPECT_EQ(load_modulator(dir / "m.bin", small_registry()), m);
  NormRegistry other = small_registry();
  other.entries[2].channels = 4;
  EXPECT_THROW(load_modulator(dir / "m.bin", other), ConfigError);
}

}  // namespace
}  // namespace trajtta
