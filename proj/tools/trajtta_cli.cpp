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

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trajtta/errors.hpp"
#include "trajtta/experiment.hpp"

namespace {

struct Overrides {
  std::optional<int> steps;
  std::optional<double> lr;
  std::optional<std::string> subset;
  std::optional<std::string> granularity;
  std::optional<std::string> loss_reduction;
  std::optional<std::uint64_t> seed;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--steps", o.steps, "Adaptation steps");
  cmd->add_option("--lr", o.lr, "Adaptation learning rate");
  cmd->add_option("--subset", o.subset, "Trajectory subset: full, only_last, without_first");
  cmd->add_option("--granularity", o.granularity, "per_case or per_dataset");
  cmd->add_option("--loss-reduction", o.loss_reduction, "mean_over_S or sum_over_S");
  cmd->add_option("--seed", o.seed, "Adaptation seed");
}

void apply(const Overrides& o, trajtta::ExperimentConfig& cfg) {
  if (o.steps) cfg.adapt.steps = *o.steps;
  if (o.lr) cfg.adapt.lr = *o.lr;
  if (o.subset) cfg.adapt.subset = trajtta::parse_subset(*o.subset);
  if (o.granularity) cfg.adapt.granularity = trajtta::parse_granularity(*o.granularity);
  if (o.loss_reduction) cfg.adapt.reduction = trajtta::parse_reduction(*o.loss_reduction);
  if (o.seed) cfg.adapt.seed = *o.seed;
  cfg.validate();
}

std::vector<std::string> split_values(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const auto& item : raw) {
    std::stringstream ss(item);
    std::string v;
    while (std::getline(ss, v, ',')) {
      if (!v.empty()) out.push_back(v);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory-based test-time adaptation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  bool force = false;
  bool quiet = false;
  int jobs = 1;
  bool save_trajectories = false;
  std::string mode = "irtta";
  std::string axis;
  std::vector<std::string> values;
  std::string run_dir;
  Overrides overrides;

  auto* gen = app.add_subcommand("generate", "Write the synthetic dataset");
  gen->add_option("--config", config_path, "Experiment config (INI)")->required();
  gen->add_flag("--force", force, "Overwrite an existing dataset");

  auto* train = app.add_subcommand("train", "Train and freeze the segmentation backbone");
  train->add_option("--config", config_path, "Experiment config (INI)")->required();

  auto* run = app.add_subcommand("run", "Reconstruct, adapt, ensemble and evaluate");
  run->add_option("--config", config_path, "Experiment config (INI)")->required();
  run->add_option("--mode", mode, "baseline, last_only_adapt, irtta or irtta_sup")
      ->capture_default_str();
  run->add_option("--jobs", jobs, "Worker threads for case-level work")->capture_default_str();
  run->add_flag("--save-trajectories", save_trajectories, "Persist trajectories in the run dir");
  add_overrides(run, overrides);

  auto* ablate = app.add_subcommand("ablate", "Sweep one setting and collate summaries");
  ablate->add_option("--config", config_path, "Experiment config (INI)")->required();
  ablate->add_option("--axis", axis, "emb_size, steps, S, subset or granularity")->required();
  ablate->add_option("--values", values, "Comma separated values")->required();
  ablate->add_option("--mode", mode, "Run mode for every row")->capture_default_str();
  ablate->add_option("--jobs", jobs, "Worker threads for case-level work")->capture_default_str();
  ablate->add_flag("--save-trajectories", save_trajectories, "Persist trajectories");
  add_overrides(ablate, overrides);

  auto* report = app.add_subcommand("report", "Recompute a run summary from its outputs");
  report->add_option("--run-dir", run_dir, "Run directory")->required();

  app.add_flag("-q,--quiet", quiet, "Log to files only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(trajtta::ErrorCategory::kArgument);
  }

  try {
    if (*report) {
      const auto s = trajtta::cmd_report(run_dir);
      std::cout << trajtta::summary_csv(std::span<const trajtta::Summary>(&s, 1));
      return 0;
    }
    auto cfg = trajtta::load_experiment_config(config_path);
    apply(overrides, cfg);
    trajtta::RunOptions opts;
    opts.mode = trajtta::parse_run_mode(mode);
    opts.jobs = jobs;
    opts.save_trajectories = save_trajectories;
    opts.quiet = quiet;

    if (*gen) {
      trajtta::cmd_generate(cfg, force, quiet);
    } else if (*train) {
      const auto r = trajtta::cmd_train(cfg, quiet);
      if (r.val_dice) std::cout << "val_dice," << *r.val_dice << '\n';
    } else if (*run) {
      const auto r = trajtta::cmd_run(cfg, opts);
      std::cout << trajtta::summary_csv(std::span<const trajtta::Summary>(&r.summary, 1));
      std::cout << "run_dir," << r.run_dir.string() << '\n';
    } else if (*ablate) {
      const auto rows =
          trajtta::cmd_ablate(cfg, trajtta::parse_ablation_axis(axis), split_values(values), opts);
      std::vector<trajtta::Summary> summaries;
      for (const auto& row : rows) summaries.push_back(row.run.summary);
      std::cout << trajtta::summary_csv(summaries);
    }
  } catch (const trajtta::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
