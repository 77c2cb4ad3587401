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
#include "trajtta/errors.hpp"
#include "trajtta/metrics.hpp"
#include "trajtta/modulator.hpp"
#include "trajtta/train.hpp"
#include "trajtta/tta.hpp"
#include "trajtta/volume_io.hpp"

namespace trajtta {
namespace {

using testing::Gen;
using testing::rel_err;
using testing::tiny_arch;

ProbMap probs_only(int pixels, int c, std::vector<double> probs) {
  ProbMap m;
  m.pixels = pixels;
  m.num_classes = c;
  m.logits.assign(probs.size(), 0.0);
  m.probs = std::move(probs);
  return m;
}

// Independent per-map entropy with an explicit 0 log 0 = 0 convention.
double oracle_entropy(const ProbMap& m) {
  double h = 0.0;
  for (int p = 0; p < m.pixels; ++p) {
    for (int c = 0; c < m.num_classes; ++c) {
      const double v = m.probs[static_cast<std::size_t>(p) * m.num_classes + c];
      h += v == 0.0 ? 0.0 : -v * std::log(v);
    }
  }
  return h / m.pixels;
}

TEST(EntropyLoss, OneHotIsZero) {
  const std::vector<ProbMap> maps{probs_only(3, 2, {1.0, 0.0, 0.0, 1.0, 1.0, 0.0})};
  EXPECT_EQ(entropy_loss(maps, LossReduction::kMeanOverS), 0.0);
}

TEST(EntropyLoss, UniformIsLogC) {
  const std::vector<ProbMap> one{probs_only(2, 4, std::vector<double>(8, 0.25))};
  EXPECT_NEAR(entropy_loss(one, LossReduction::kMeanOverS), std::log(4.0), 1e-15);
  EXPECT_NEAR(entropy_loss(one, LossReduction::kMeanOverS), 1.3863, 1e-4);
  const std::vector<ProbMap> two{one[0], one[0]};
  EXPECT_NEAR(entropy_loss(two, LossReduction::kSumOverS), 2.0 * std::log(4.0), 1e-15);
  EXPECT_NEAR(entropy_loss(two, LossReduction::kSumOverS), 2.7726, 1e-4);
  EXPECT_NEAR(entropy_loss(two, LossReduction::kMeanOverS), std::log(4.0), 1e-15);
}

TEST(EntropyLoss, MatchesOracleAndBounds) {
  Gen g(1);
  for (int draw = 0; draw < 100; ++draw) {
    const int c = g.integer(2, 6);
    const int s = g.integer(1, 5);
    std::vector<ProbMap> maps;
    double want = 0.0;
    for (int i = 0; i < s; ++i) {
      std::vector<double> probs;
      for (int p = 0; p < 7; ++p) {
        const auto row = g.simplex(c, true);
        probs.insert(probs.end(), row.begin(), row.end());
      }
      maps.push_back(probs_only(7, c, probs));
      want += oracle_entropy(maps.back());
    }
    const double sum = entropy_loss(maps, LossReduction::kSumOverS);
    EXPECT_NEAR(sum, want, 1e-12);
    EXPECT_NEAR(entropy_loss(maps, LossReduction::kMeanOverS), want / s, 1e-12);
    EXPECT_GE(sum, 0.0);
    EXPECT_LE(sum, s * std::log(c) + 1e-12);
  }
}

TEST(EntropyLoss, EmptyOrMismatchedIsArgumentError) {
  EXPECT_THROW(entropy_loss({}, LossReduction::kMeanOverS), ArgumentError);
  const std::vector<ProbMap> maps{probs_only(1, 2, {0.5, 0.5}), probs_only(1, 3, {1.0, 0, 0})};
  EXPECT_THROW(entropy_loss(maps, LossReduction::kMeanOverS), ArgumentError);
}

TEST(Subsets, SelectedIndices) {
  using V = std::vector<std::size_t>;
  EXPECT_EQ(select_steps(4, TrajectorySubset::kFull), (V{0, 1, 2, 3}));
  EXPECT_EQ(select_steps(4, TrajectorySubset::kOnlyLast), (V{3}));
  EXPECT_EQ(select_steps(4, TrajectorySubset::kWithoutFirst), (V{1, 2, 3}));
  EXPECT_EQ(select_steps(1, TrajectorySubset::kOnlyLast), (V{0}));
  EXPECT_EQ(select_steps(1, TrajectorySubset::kFull), (V{0}));
}

TEST(Subsets, ParsingRoundTripsAndRejectsUnknown) {
  for (const char* n : {"full", "only_last", "without_first"}) {
    EXPECT_EQ(to_string(parse_subset(n)), n);
  }
  for (const char* n : {"per_case", "per_dataset"}) EXPECT_EQ(to_string(parse_granularity(n)), n);
  for (const char* n : {"mean_over_S", "sum_over_S"}) EXPECT_EQ(to_string(parse_reduction(n)), n);
  EXPECT_THROW(parse_subset("first_only"), ConfigError);
  EXPECT_THROW(parse_granularity("per_batch"), ConfigError);
  EXPECT_THROW(parse_reduction("max"), ConfigError);
}

TEST(Config, DefaultsAndValidation) {
  const AdaptConfig cfg;
  EXPECT_EQ(cfg.steps, 100);
  EXPECT_EQ(cfg.lr, 1e-5);
  EXPECT_EQ(cfg.reduction, LossReduction::kMeanOverS);
  AdaptConfig bad;
  bad.steps = -1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = AdaptConfig{};
  bad.lr = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

class TinyObjective : public ::testing::Test {
 protected:
  TinyObjective()
      : g_(5),
        net_(testing::randomized_backbone(tiny_arch(), 5)),
        mod_(Modulator::init(net_.registry(), small_config(), 3)) {
    for (std::size_t l = 0; l < net_.registry().size(); ++l) {
      for (double& v : mod_.head_weight(l)) v = g_.normal(0.1);
      for (double& v : mod_.head_bias(l)) v = g_.normal(0.1);
    }
    traj_ = testing::random_trajectory(g_, 3, 8, 8, "t");
  }
  static ModulatorConfig small_config() {
    ModulatorConfig c;
    c.emb_dim = 4;
    c.hidden_dim = 6;
    return c;
  }
  Gen g_;
  Backbone net_;
  Modulator mod_;
  Trajectory traj_;
};

TEST_F(TinyObjective, ValueMatchesPerStepEntropy) {
  for (const auto subset :
       {TrajectorySubset::kFull, TrajectorySubset::kOnlyLast, TrajectorySubset::kWithoutFirst}) {
    double sum = 0.0;
    const auto idx = select_steps(3, subset);
    for (const auto i : idx) {
      const ModulationSet s = mod_.forward(traj_.steps[i].time, traj_.horizon);
      sum += oracle_entropy(net_.forward(traj_.steps[i].image, &s));
    }
    EXPECT_NEAR(trajectory_objective(net_, mod_, traj_, subset, LossReduction::kSumOverS, nullptr,
                                     {}),
                sum, 1e-12);
    EXPECT_NEAR(trajectory_objective(net_, mod_, traj_, subset, LossReduction::kMeanOverS,
                                     nullptr, {}),
                sum / idx.size(), 1e-12);
  }
}

TEST_F(TinyObjective, EntropyGradientMatchesFiniteDifferences) {
  std::vector<double> grad(mod_.num_params(), 0.0);
  trajectory_objective(net_, mod_, traj_, TrajectorySubset::kFull, LossReduction::kMeanOverS,
                       nullptr, grad);
  // Larger than sqrt(eps): some trunk gradients are ~1e-7 against an O(1) loss.
  const double h = 1e-5;
  int checked = 0;
  for (std::size_t k = 0; k < mod_.num_params(); ++k) {
    Modulator mp = mod_;
    Modulator mm = mod_;
    mp.params()[k] += h;
    mm.params()[k] -= h;
    const double fd = (trajectory_objective(net_, mp, traj_, TrajectorySubset::kFull,
                                            LossReduction::kMeanOverS, nullptr, {}) -
                       trajectory_objective(net_, mm, traj_, TrajectorySubset::kFull,
                                            LossReduction::kMeanOverS, nullptr, {})) /
                      (2.0 * h);
    ASSERT_LT(rel_err(grad[k], fd, 1e-6), 1e-4) << "param " << k;
    ++checked;
  }
  EXPECT_EQ(checked, static_cast<int>(mod_.num_params()));
}

TEST_F(TinyObjective, CrossEntropyGradientMatchesFiniteDifferences) {
  SegmentationMask labels(8, 8, 3);
  for (auto& l : labels.labels) l = g_.integer(0, 2);
  std::vector<double> grad(mod_.num_params(), 0.0);
  trajectory_objective(net_, mod_, traj_, TrajectorySubset::kWithoutFirst,
                       LossReduction::kSumOverS, &labels, grad);
  const double h = 1e-5;
  for (std::size_t k = 0; k < mod_.num_params(); k += 3) {
    Modulator mp = mod_;
    Modulator mm = mod_;
    mp.params()[k] += h;
    mm.params()[k] -= h;
    const double fd = (trajectory_objective(net_, mp, traj_, TrajectorySubset::kWithoutFirst,
                                            LossReduction::kSumOverS, &labels, {}) -
                       trajectory_objective(net_, mm, traj_, TrajectorySubset::kWithoutFirst,
                                            LossReduction::kSumOverS, &labels, {})) /
                      (2.0 * h);
    ASSERT_LT(rel_err(grad[k], fd, 1e-6), 1e-4) << "param " << k;
  }
}

TEST_F(TinyObjective, MismatchedRegistryIsShapeError) {
  NormRegistry other = net_.registry();
  other.entries[0].channels += 1;
  const Modulator wrong = Modulator::init(other, small_config(), 1);
  EXPECT_THROW(trajectory_objective(net_, wrong, traj_, TrajectorySubset::kFull,
                                    LossReduction::kMeanOverS, nullptr, {}),
               ShapeError);
  const std::vector<Trajectory> trajs{traj_};
  EXPECT_THROW(adapt(net_, wrong, trajs, AdaptConfig{}), ShapeError);
}

TEST_F(TinyObjective, LabelSizeMismatchIsShapeError) {
  const SegmentationMask labels(4, 4, 3);
  const std::vector<Trajectory> trajs{traj_};
  const std::vector<SegmentationMask> ls{labels};
  EXPECT_THROW(supervised_adapt(net_, mod_, trajs, ls, AdaptConfig{}), ShapeError);
}

TEST_F(TinyObjective, DivergenceReportsStepIndex) {
  const std::vector<Trajectory> trajs{traj_};
  AdaptConfig cfg;
  cfg.steps = 200;
  cfg.lr = 1e300;
  try {
    adapt(net_, mod_, trajs, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingError& e) {
    EXPECT_GE(e.step(), 1);
    EXPECT_LE(e.step(), 200);
  }
}

// A small trained backbone and a handful of shifted cases, shared by the
// adaptation tests below.
struct Bench {
  Backbone net;
  std::vector<Trajectory> trajectories;
  std::vector<SegmentationMask> masks;
};

PhantomConfig bench_phantom() {
  PhantomConfig pc;
  pc.height = 16;
  pc.width = 16;
  pc.num_classes = 3;
  pc.min_radius = 2.0;
  pc.max_radius = 4.0;
  pc.min_bands = 2;
  pc.max_bands = 3;
  return pc;
}

const Bench& bench() {
  static const Bench b = [] {
    const PhantomConfig pc = bench_phantom();
    std::vector<Image> images;
    std::vector<SegmentationMask> masks;
    for (std::uint64_t s = 0; s < 24; ++s) {
      auto c = generate_synthetic_case(100 + s, pc);
      images.push_back(c.clean);
      masks.push_back(c.mask);
    }
    ArchConfig a;
    a.height = 16;
    a.width = 16;
    a.num_classes = 3;
    a.base_width = 4;
    a.depth = 2;
    Backbone net = Backbone::build(a, 1);
    TrainConfig tc;
    tc.steps = 300;
    tc.batch_size = 4;
    tc.lr = 1e-2;
    tc.final_lr = 1e-4;
    train_backbone(net, images, masks, tc);

    Bench out{std::move(net), {}, {}};
    const ShiftConfig shift{1.3, 1.0, 0.0, 0.1};
    ReconConfig rc;
    rc.steps = 4;
    for (std::uint64_t s = 0; s < 6; ++s) {
      auto c = generate_synthetic_case(500 + s, pc);
      const Measurement m = apply_domain_shift(c.measurement, shift, s);
      rc.noise_seed = s;
      out.trajectories.push_back(reconstruct(m, rc, "case_" + std::to_string(s)));
      out.masks.push_back(c.mask);
    }
    return out;
  }();
  return b;
}

double mean_dice(const Backbone& net, const AdaptResult* r, const Bench& b) {
  double total = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < b.trajectories.size(); ++i) {
    const auto maps = predict_trajectory(net, r ? &r->for_case(i) : nullptr, b.trajectories[i]);
    const auto pred = maps.back().argmax();
    for (int c = 1; c < 3; ++c) {
      const auto d = dice(std::span<const std::int32_t>(pred),
                          std::span<const std::int32_t>(b.masks[i].labels), c);
      if (d) {
        total += *d;
        ++n;
      }
    }
  }
  return total / n;
}

Modulator fresh(const Backbone& net) {
  return Modulator::init(net.registry(), ModulatorConfig{}, 7);
}

TEST(Adapt, ZeroStepsIsIdentity) {
  const Bench& b = bench();
  const Modulator init = fresh(b.net);
  AdaptConfig cfg;
  cfg.steps = 0;
  for (const auto g : {Granularity::kPerCase, Granularity::kPerDataset}) {
    cfg.granularity = g;
    const AdaptResult r = adapt(b.net, init, b.trajectories, cfg);
    for (std::size_t i = 0; i < b.trajectories.size(); ++i) {
      EXPECT_EQ(r.for_case(i), init);
      const auto base = predict_trajectory(b.net, nullptr, b.trajectories[i]);
      const auto mod = predict_trajectory(b.net, &r.for_case(i), b.trajectories[i]);
      for (std::size_t s = 0; s < base.size(); ++s) EXPECT_EQ(base[s].argmax(), mod[s].argmax());
    }
    EXPECT_EQ(r.reports[0].final_loss, r.reports[0].initial_loss);
    EXPECT_EQ(r.reports[0].steps_run, 0);
  }
}

TEST(Adapt, EntropyDecreasesAndThetaStaysFrozen) {
  const Bench& b = bench();
  const auto checksum = b.net.weights().checksum();
  const auto theta = b.net.weights().theta;
  AdaptConfig cfg;
  cfg.steps = 100;
  cfg.lr = 1e-3;
  const AdaptResult r = adapt(b.net, fresh(b.net), b.trajectories, cfg);
  ASSERT_EQ(r.modulators.size(), 1u);
  EXPECT_EQ(r.reports[0].scope, "dataset");
  EXPECT_LT(r.reports[0].final_loss, r.reports[0].initial_loss);
  EXPECT_EQ(static_cast<int>(r.reports[0].loss_curve.size()), 100);
  for (const auto& [step, loss] : r.reports[0].loss_curve) ASSERT_TRUE(std::isfinite(loss));
  EXPECT_EQ(b.net.weights().checksum(), checksum);
  EXPECT_EQ(b.net.weights().theta, theta);
}

TEST(Adapt, PerCaseGivesOneModulatorPerCaseIndependentOfJobs) {
  const Bench& b = bench();
  AdaptConfig cfg;
  cfg.steps = 10;
  cfg.lr = 1e-3;
  cfg.granularity = Granularity::kPerCase;
  const AdaptResult serial = adapt(b.net, fresh(b.net), b.trajectories, cfg);
  cfg.jobs = 3;
  const AdaptResult parallel = adapt(b.net, fresh(b.net), b.trajectories, cfg);
  ASSERT_EQ(serial.modulators.size(), b.trajectories.size());
  EXPECT_EQ(serial.modulators, parallel.modulators);
  for (std::size_t i = 0; i < b.trajectories.size(); ++i) {
    EXPECT_EQ(serial.reports[i].scope, b.trajectories[i].case_id);
  }
  // Each case starts from the same initial modulator: adapting a single
  // case alone reproduces its per-case result.
  const std::vector<Trajectory> one{b.trajectories[2]};
  cfg.jobs = 1;
  EXPECT_EQ(adapt(b.net, fresh(b.net), one, cfg).modulators[0], serial.modulators[2]);
}

TEST(Adapt, SameSeedIsBitIdentical) {
  const Bench& b = bench();
  AdaptConfig cfg;
  cfg.steps = 15;
  cfg.lr = 1e-3;
  cfg.seed = 4;
  const auto a = adapt(b.net, fresh(b.net), b.trajectories, cfg);
  const auto c = adapt(b.net, fresh(b.net), b.trajectories, cfg);
  EXPECT_EQ(a.modulators, c.modulators);
  EXPECT_EQ(a.reports[0].loss_curve, c.reports[0].loss_curve);
}

TEST(Adapt, OnlyLastEqualsFullForSingleStepTrajectories) {
  const Bench& b = bench();
  std::vector<Trajectory> single;
  for (const auto& t : b.trajectories) {
    Trajectory s = t;
    s.steps = {t.steps.back()};
    single.push_back(s);
  }
  AdaptConfig cfg;
  cfg.steps = 12;
  cfg.lr = 1e-3;
  const auto full = adapt(b.net, fresh(b.net), single, cfg);
  cfg.subset = TrajectorySubset::kOnlyLast;
  const auto last = adapt(b.net, fresh(b.net), single, cfg);
  EXPECT_EQ(full.modulators, last.modulators);
  cfg.subset = TrajectorySubset::kWithoutFirst;
  EXPECT_EQ(adapt(b.net, fresh(b.net), single, cfg).modulators, full.modulators);
}

TEST(Adapt, PerCaseLossMovingAverageDecreases) {
  // With one case per optimizer and the default learning rate the loss
  // curve is a smooth descent; its 10-step moving average never rises.
  const Bench& b = bench();
  AdaptConfig cfg;
  cfg.steps = 60;
  cfg.granularity = Granularity::kPerCase;
  const AdaptResult r = adapt(b.net, fresh(b.net), b.trajectories, cfg);
  for (const auto& rep : r.reports) {
    std::vector<double> ma;
    for (std::size_t k = 10; k <= rep.loss_curve.size(); ++k) {
      double s = 0.0;
      for (std::size_t j = k - 10; j < k; ++j) s += rep.loss_curve[j].second;
      ma.push_back(s / 10.0);
    }
    for (std::size_t k = 1; k < ma.size(); ++k) {
      EXPECT_LE(ma[k], ma[k - 1] + 1e-12) << rep.scope << " window " << k;
    }
  }
}

TEST(Supervised, ThetaFrozenAndZeroStepsIdentity) {
  const Bench& b = bench();
  const auto checksum = b.net.weights().checksum();
  AdaptConfig cfg;
  cfg.steps = 0;
  const Modulator init = fresh(b.net);
  EXPECT_EQ(supervised_adapt(b.net, init, b.trajectories, b.masks, cfg).modulators[0], init);
  cfg.steps = 20;
  cfg.lr = 1e-3;
  supervised_adapt(b.net, init, b.trajectories, b.masks, cfg);
  EXPECT_EQ(b.net.weights().checksum(), checksum);
  const std::vector<SegmentationMask> short_labels(b.masks.begin(), b.masks.end() - 1);
  EXPECT_THROW(supervised_adapt(b.net, init, b.trajectories, short_labels, cfg), ArgumentError);
}

TEST(Supervised, AtLeastAsGoodAsUnsupervisedOnItsCases) {
  const Bench& b = bench();
  AdaptConfig cfg;
  cfg.steps = 100;
  cfg.lr = 1e-3;
  const auto unsup = adapt(b.net, fresh(b.net), b.trajectories, cfg);
  const auto sup = supervised_adapt(b.net, fresh(b.net), b.trajectories, b.masks, cfg);
  EXPECT_GE(mean_dice(b.net, &sup, b), mean_dice(b.net, &unsup, b));
}

TEST(Supervised, BackgroundLabelsLowerLossButHurtForeground) {
  const Bench& b = bench();
  std::vector<SegmentationMask> blank;
  for (const auto& m : b.masks) blank.emplace_back(m.height, m.width, m.num_classes);
  AdaptConfig cfg;
  cfg.steps = 100;
  cfg.lr = 1e-3;
  const auto r = supervised_adapt(b.net, fresh(b.net), b.trajectories, blank, cfg);
  EXPECT_LT(r.reports[0].final_loss, r.reports[0].initial_loss);
  EXPECT_LT(mean_dice(b.net, &r, b), mean_dice(b.net, nullptr, b));
}

}  // namespace
}  // namespace trajtta
