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
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajtta/backbone.hpp"
#include "trajtta/metrics.hpp"
#include "trajtta/modulator.hpp"
#include "trajtta/recon.hpp"
#include "trajtta/train.hpp"
#include "trajtta/tta.hpp"
#include "trajtta/volume_io.hpp"

namespace trajtta {

struct DatasetConfig {
  std::filesystem::path root = "data";
  std::uint64_t seed = 42;
  int n_train = 200;
  int n_val = 20;
  int n_test = 40;
  PhantomConfig phantom;
  ShiftConfig shift;  // applied to test measurements only
};

struct EvalConfig {
  int n_bins = 15;
  std::filesystem::path output_dir = "runs";
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ReconConfig recon;
  ArchConfig arch;
  TrainConfig train;
  std::uint64_t backbone_seed = 0;
  std::filesystem::path checkpoint;  // empty: <dataset.root>/backbone.ckpt
  ModulatorConfig modulator;
  std::uint64_t modulator_seed = 0;
  AdaptConfig adapt;
  EvalConfig eval;

  std::filesystem::path checkpoint_path() const;
  void validate() const;
  // Canonical description of every setting that affects results.
  nlohmann::json to_json() const;
};

// INI file with sections [dataset], [recon], [backbone], [modulator],
// [adapt] and [eval]. Unknown keys are rejected. Relative paths resolve
// against the directory of the file.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const std::string& ini_text,
                                         const std::filesystem::path& base_dir = ".");

enum class RunMode { kBaseline, kLastOnlyAdapt, kIrtta, kIrttaSup };
RunMode parse_run_mode(const std::string& name);
std::string to_string(RunMode mode);

struct RunOptions {
  RunMode mode = RunMode::kIrtta;
  int jobs = 1;
  bool save_trajectories = false;
  bool quiet = false;
};

struct RunResult {
  std::filesystem::path run_dir;
  std::string run_hash;
  Summary summary;
  std::vector<CaseMetrics> cases;
  std::vector<AdaptReport> reports;
  std::uint64_t theta_before = 0;
  std::uint64_t theta_after = 0;
  double runtime_s = 0.0;  // adaptation plus inference
  bool trajectories_from_cache = false;
};

// Writes <root>/{train,val,test}/case_NNNN. Throws ArgumentError when the
// dataset root already holds files and `force` is false.
void cmd_generate(const ExperimentConfig& cfg, bool force, bool quiet = false);

struct TrainResult {
  TrainReport report;
  std::optional<double> val_dice;  // mean foreground Dice on clean val cases
  std::uint64_t checksum = 0;
};
TrainResult cmd_train(const ExperimentConfig& cfg, bool quiet = false);

// Reconstruct, optionally adapt, ensemble and score the test split. The
// run directory is <output_dir>/<first 8 hex digits of the config hash>;
// an existing directory holding a different config aborts the run.
RunResult cmd_run(const ExperimentConfig& cfg, const RunOptions& options);

enum class AblationAxis { kEmbSize, kSteps, kS, kSubset, kGranularity };
AblationAxis parse_ablation_axis(const std::string& name);
std::string to_string(AblationAxis axis);

struct AblationRow {
  std::string value;
  RunResult run;
};

// One irtta run per value with the shared dataset and checkpoint; writes
// <output_dir>/ablation_<axis>.csv. Throws ArgumentError for no values.
std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, AblationAxis axis,
                                    const std::vector<std::string>& values,
                                    const RunOptions& options);

// Recomputes the metrics of a finished run from its per-case outputs and
// rewrites summary.csv. Returns the regenerated summary.
Summary cmd_report(const std::filesystem::path& run_dir);

// Config hash and run directory name used by cmd_run.
std::string run_hash(const ExperimentConfig& cfg, RunMode mode);

}  // namespace trajtta
