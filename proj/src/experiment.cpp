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

#include "trajtta/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "trajtta/archive.hpp"
#include "trajtta/errors.hpp"
#include "trajtta/npy.hpp"
#include "trajtta/uncertainty.hpp"

namespace trajtta {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string case_name(const std::string& split, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04d", split.c_str(), index);
  return buf;
}

template <typename T>
T parse_value(const std::string& section, const std::string& key, const std::string& text) {
  std::istringstream is(text);
  T value{};
  is >> value;
  if (is.fail() || !(is >> std::ws).eof()) {
    throw ConfigError("[" + section + "] " + key + ": cannot parse '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& section, const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("[" + section + "] " + key + ": expected a boolean, got '" + text + "'");
}

fs::path resolve(const fs::path& base, const std::string& text) {
  const fs::path p(text);
  return p.is_absolute() ? p : base / p;
}

std::shared_ptr<spdlog::logger> make_logger(const std::string& name, const fs::path& file,
                                            bool quiet) {
  std::vector<spdlog::sink_ptr> sinks;
  if (!quiet) sinks.push_back(std::make_shared<spdlog::sinks::stderr_color_sink_mt>());
  if (!file.empty()) {
    sinks.push_back(std::make_shared<spdlog::sinks::basic_file_sink_mt>(file.string(), false));
  }
  auto logger = std::make_shared<spdlog::logger>(name, sinks.begin(), sinks.end());
  logger->set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%l] %v");
  logger->flush_on(spdlog::level::info);
  return logger;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first
// failure.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        const std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n);
  {
    std::vector<std::jthread> pool;
    for (std::size_t j = 1; j < threads; ++j) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string(), std::string("invalid JSON: ") + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

std::vector<SyntheticCase> load_split(const fs::path& root, const std::string& split) {
  const fs::path dir = root / split;
  if (!fs::is_directory(dir)) {
    throw IoError(dir.string(), "dataset split not found (run 'generate' first)");
  }
  std::vector<SyntheticCase> cases;
  for (const auto& d : list_case_dirs(dir)) cases.push_back(load_case(d));
  return cases;
}

std::optional<double> mean_foreground_dice(const Backbone& net,
                                           const std::vector<SyntheticCase>& cases, int n_bins) {
  std::vector<CaseMetrics> metrics;
  for (const auto& c : cases) {
    const ProbMap pm = net.forward(c.clean);
    metrics.push_back(evaluate_case(c.case_id, pm.probs, c.mask, n_bins));
  }
  return aggregate(metrics).mean_dice;
}

}  // namespace

fs::path ExperimentConfig::checkpoint_path() const {
  return checkpoint.empty() ? dataset.root / "backbone.ckpt" : checkpoint;
}

void ExperimentConfig::validate() const {
  if (dataset.n_train < 0 || dataset.n_val < 0 || dataset.n_test < 0) {
    throw ConfigError("dataset sizes must be >= 0");
  }
  dataset.phantom.validate();
  dataset.shift.validate();
  recon.validate();
  arch.validate();
  if (arch.height != dataset.phantom.height || arch.width != dataset.phantom.width ||
      arch.num_classes != dataset.phantom.num_classes) {
    throw ConfigError("backbone input size and class count must match the dataset");
  }
  train.validate();
  modulator.validate();
  adapt.validate();
  if (eval.n_bins < 1) throw ConfigError("eval n_bins must be >= 1");
}

json ExperimentConfig::to_json() const {
  const auto& p = dataset.phantom;
  const auto& s = dataset.shift;
  return {
      {"dataset",
       {{"root", dataset.root.string()},
        {"seed", dataset.seed},
        {"n_train", dataset.n_train},
        {"n_val", dataset.n_val},
        {"n_test", dataset.n_test},
        {"height", p.height},
        {"width", p.width},
        {"num_classes", p.num_classes},
        {"min_bands", p.min_bands},
        {"max_bands", p.max_bands},
        {"min_lesions", p.min_lesions},
        {"max_lesions", p.max_lesions},
        {"min_radius", p.min_radius},
        {"max_radius", p.max_radius},
        {"absent_probability", p.absent_probability},
        {"speckle", p.speckle},
        {"measurement_noise", p.measurement_noise},
        {"operator", p.operator_id},
        {"shift_gamma", s.gamma},
        {"shift_gain", s.gain},
        {"shift_offset", s.offset},
        {"shift_noise", s.noise}}},
      {"recon",
       {{"steps", recon.steps},
        {"horizon", recon.horizon},
        {"step_size", recon.step_size},
        {"init_mode", to_string(recon.init_mode)},
        {"noise_seed", recon.noise_seed},
        {"noise_scale", recon.noise_scale},
        {"schedule_ratio", recon.schedule_ratio},
        {"blur_sigma", recon.blur_sigma}}},
      {"backbone",
       {{"arch", arch.to_json()},
        {"seed", backbone_seed},
        {"checkpoint", checkpoint_path().string()},
        {"train_steps", train.steps},
        {"batch_size", train.batch_size},
        {"lr", train.lr},
        {"final_lr", train.final_lr},
        {"train_seed", train.seed},
        {"augment", train.augment},
        {"max_shift", train.max_shift},
        {"contrast", train.contrast},
        {"noise", train.noise},
        {"foreground_weight", train.foreground_weight}}},
      {"modulator", {{"config", modulator.to_json()}, {"seed", modulator_seed}}},
      {"adapt", adapt.to_json()},
      {"eval", {{"n_bins", eval.n_bins}}},
  };
}

ExperimentConfig parse_experiment_config(const std::string& ini_text, const fs::path& base_dir) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream is(ini_text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }

  ExperimentConfig cfg;
  auto& p = cfg.dataset.phantom;
  auto& s = cfg.dataset.shift;
  using Setter = std::function<void(const std::string&, const std::string&, const std::string&)>;
  auto i32 = [](int& dst) -> Setter {
    return [&dst](const auto& sec, const auto& key, const auto& v) {
      dst = parse_value<int>(sec, key, v);
    };
  };
  auto u64 = [](std::uint64_t& dst) -> Setter {
    return [&dst](const auto& sec, const auto& key, const auto& v) {
      dst = parse_value<std::uint64_t>(sec, key, v);
    };
  };
  auto f64 = [](double& dst) -> Setter {
    return [&dst](const auto& sec, const auto& key, const auto& v) {
      dst = parse_value<double>(sec, key, v);
    };
  };
  auto flag = [](bool& dst) -> Setter {
    return [&dst](const auto& sec, const auto& key, const auto& v) {
      dst = parse_bool(sec, key, v);
    };
  };
  auto path = [&base_dir](fs::path& dst) -> Setter {
    return [&dst, &base_dir](const auto&, const auto&, const auto& v) { dst = resolve(base_dir, v); };
  };
  auto text = [](std::string& dst) -> Setter {
    return [&dst](const auto&, const auto&, const auto& v) { dst = v; };
  };

  const std::map<std::string, std::map<std::string, Setter>> table = {
      {"dataset",
       {{"root", path(cfg.dataset.root)},
        {"seed", u64(cfg.dataset.seed)},
        {"n_train", i32(cfg.dataset.n_train)},
        {"n_val", i32(cfg.dataset.n_val)},
        {"n_test", i32(cfg.dataset.n_test)},
        {"height", i32(p.height)},
        {"width", i32(p.width)},
        {"num_classes", i32(p.num_classes)},
        {"min_bands", i32(p.min_bands)},
        {"max_bands", i32(p.max_bands)},
        {"min_lesions", i32(p.min_lesions)},
        {"max_lesions", i32(p.max_lesions)},
        {"min_radius", f64(p.min_radius)},
        {"max_radius", f64(p.max_radius)},
        {"absent_probability", f64(p.absent_probability)},
        {"speckle", f64(p.speckle)},
        {"measurement_noise", f64(p.measurement_noise)},
        {"operator", text(p.operator_id)},
        {"shift_gamma", f64(s.gamma)},
        {"shift_gain", f64(s.gain)},
        {"shift_offset", f64(s.offset)},
        {"shift_noise", f64(s.noise)}}},
      {"recon",
       {{"steps", i32(cfg.recon.steps)},
        {"horizon", f64(cfg.recon.horizon)},
        {"step_size", f64(cfg.recon.step_size)},
        {"init_mode",
         [&cfg](const auto&, const auto&, const auto& v) {
           cfg.recon.init_mode = parse_init_mode(v);
         }},
        {"noise_seed", u64(cfg.recon.noise_seed)},
        {"noise_scale", f64(cfg.recon.noise_scale)},
        {"schedule_ratio", f64(cfg.recon.schedule_ratio)},
        {"blur_sigma", f64(cfg.recon.blur_sigma)}}},
      {"backbone",
       {{"base_width", i32(cfg.arch.base_width)},
        {"depth", i32(cfg.arch.depth)},
        {"norm",
         [&cfg](const auto&, const auto&, const auto& v) { cfg.arch.norm = parse_norm_kind(v); }},
        {"seed", u64(cfg.backbone_seed)},
        {"checkpoint", path(cfg.checkpoint)},
        {"train_steps", i32(cfg.train.steps)},
        {"batch_size", i32(cfg.train.batch_size)},
        {"lr", f64(cfg.train.lr)},
        {"final_lr", f64(cfg.train.final_lr)},
        {"train_seed", u64(cfg.train.seed)},
        {"augment", flag(cfg.train.augment)},
        {"max_shift", i32(cfg.train.max_shift)},
        {"contrast", f64(cfg.train.contrast)},
        {"noise", f64(cfg.train.noise)},
        {"foreground_weight", f64(cfg.train.foreground_weight)}}},
      {"modulator",
       {{"emb_dim", i32(cfg.modulator.emb_dim)},
        {"hidden_dim", i32(cfg.modulator.hidden_dim)},
        {"max_period", f64(cfg.modulator.max_period)},
        {"gamma_clamp", f64(cfg.modulator.gamma_clamp)},
        {"normalize_time", flag(cfg.modulator.normalize_time)},
        {"seed", u64(cfg.modulator_seed)}}},
      {"adapt",
       {{"steps", i32(cfg.adapt.steps)},
        {"lr", f64(cfg.adapt.lr)},
        {"granularity",
         [&cfg](const auto&, const auto&, const auto& v) {
           cfg.adapt.granularity = parse_granularity(v);
         }},
        {"subset",
         [&cfg](const auto&, const auto&, const auto& v) { cfg.adapt.subset = parse_subset(v); }},
        {"loss_reduction",
         [&cfg](const auto&, const auto&, const auto& v) {
           cfg.adapt.reduction = parse_reduction(v);
         }},
        {"seed", u64(cfg.adapt.seed)}}},
      {"eval", {{"n_bins", i32(cfg.eval.n_bins)}, {"output_dir", path(cfg.eval.output_dir)}}},
  };

  cfg.dataset.root = base_dir / cfg.dataset.root;
  cfg.eval.output_dir = base_dir / cfg.eval.output_dir;
  for (const auto& [section, keys] : tree) {
    const auto sec = table.find(section);
    if (sec == table.end()) throw ConfigError("unknown config section [" + section + "]");
    if (keys.empty() && !keys.data().empty()) {
      throw ConfigError("key '" + section + "' is outside any section");
    }
    for (const auto& [key, node] : keys) {
      const auto setter = sec->second.find(key);
      if (setter == sec->second.end()) {
        throw ConfigError("unknown key '" + key + "' in [" + section + "]");
      }
      setter->second(section, key, node.data());
    }
  }
  cfg.arch.height = p.height;
  cfg.arch.width = p.width;
  cfg.arch.num_classes = p.num_classes;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str(), path.parent_path().empty() ? "." : path.parent_path());
}

RunMode parse_run_mode(const std::string& name) {
  if (name == "baseline") return RunMode::kBaseline;
  if (name == "last_only_adapt") return RunMode::kLastOnlyAdapt;
  if (name == "irtta") return RunMode::kIrtta;
  if (name == "irtta_sup") return RunMode::kIrttaSup;
  throw ConfigError("unknown mode '" + name +
                    "' (expected baseline, last_only_adapt, irtta or irtta_sup)");
}

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::kBaseline:
      return "baseline";
    case RunMode::kLastOnlyAdapt:
      return "last_only_adapt";
    case RunMode::kIrtta:
      return "irtta";
    case RunMode::kIrttaSup:
      return "irtta_sup";
  }
  return "irtta";
}

AblationAxis parse_ablation_axis(const std::string& name) {
  if (name == "emb_size") return AblationAxis::kEmbSize;
  if (name == "steps") return AblationAxis::kSteps;
  if (name == "S") return AblationAxis::kS;
  if (name == "subset") return AblationAxis::kSubset;
  if (name == "granularity") return AblationAxis::kGranularity;
  throw ConfigError("unknown ablation axis '" + name +
                    "' (expected emb_size, steps, S, subset or granularity)");
}

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::kEmbSize:
      return "emb_size";
    case AblationAxis::kSteps:
      return "steps";
    case AblationAxis::kS:
      return "S";
    case AblationAxis::kSubset:
      return "subset";
    case AblationAxis::kGranularity:
      return "granularity";
  }
  return "steps";
}

std::string run_hash(const ExperimentConfig& cfg, RunMode mode) {
  json j = cfg.to_json();
  j["mode"] = to_string(mode);
  return to_hex(fnv1a64(j.dump()));
}

void cmd_generate(const ExperimentConfig& cfg, bool force, bool quiet) {
  cfg.validate();
  const fs::path& root = cfg.dataset.root;
  auto log = make_logger("generate", {}, quiet);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force) {
      throw ArgumentError("dataset directory " + root.string() +
                          " is not empty (use --force to overwrite)");
    }
    for (const char* split : {"train", "val", "test"}) fs::remove_all(root / split);
    fs::remove(root / "dataset.json");
  }
  fs::create_directories(root);

  struct Split {
    std::string name;
    int count;
    std::uint64_t tag;
  };
  const std::vector<Split> splits = {{"train", cfg.dataset.n_train, 1},
                                     {"val", cfg.dataset.n_val, 2},
                                     {"test", cfg.dataset.n_test, 3}};
  for (const auto& split : splits) {
    if (split.count == 0) continue;
    fs::create_directories(root / split.name);
    for (int i = 0; i < split.count; ++i) {
      const std::string id = case_name(split.name, i);
      const std::uint64_t seed =
          mix_seed(mix_seed(cfg.dataset.seed, split.tag), static_cast<std::uint64_t>(i));
      SyntheticCase c = generate_synthetic_case(seed, cfg.dataset.phantom, id);
      if (split.name == "test" && !cfg.dataset.shift.is_identity()) {
        c.measurement = apply_domain_shift(c.measurement, cfg.dataset.shift, mix_seed(seed, 7));
      }
      save_case(root / split.name / id, c);
    }
    log->info("wrote {} {} cases to {}", split.count, split.name, (root / split.name).string());
  }
  write_json(root / "dataset.json", cfg.to_json().at("dataset"));
}

TrainResult cmd_train(const ExperimentConfig& cfg, bool quiet) {
  cfg.validate();
  const fs::path ckpt = cfg.checkpoint_path();
  if (!ckpt.parent_path().empty()) fs::create_directories(ckpt.parent_path());
  fs::path log_file = ckpt;
  log_file += ".log";
  auto log = make_logger("train", log_file, quiet);

  const auto train = load_split(cfg.dataset.root, "train");
  std::vector<Image> images;
  std::vector<SegmentationMask> masks;
  for (const auto& c : train) {
    images.push_back(c.clean);
    masks.push_back(c.mask);
  }
  log->info("training on {} cases for {} steps (batch {})", images.size(), cfg.train.steps,
            cfg.train.batch_size);

  Backbone net = Backbone::build(cfg.arch, cfg.backbone_seed);
  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  result.report = train_backbone(net, images, masks, cfg.train);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& [step, loss] : result.report.loss_curve) {
    if (step % 100 == 0) log->info("step {} loss {:.5f}", step, loss);
  }
  log->info("training finished in {:.1f} s, final loss {:.5f}", secs, result.report.final_loss);

  if (fs::is_directory(cfg.dataset.root / "val")) {
    const auto val = load_split(cfg.dataset.root, "val");
    if (!val.empty()) {
      result.val_dice = mean_foreground_dice(net, val, cfg.eval.n_bins);
      log->info("source validation mean foreground Dice {:.4f} on {} cases",
                result.val_dice.value_or(0.0), val.size());
    }
  }
  save_backbone(ckpt, net);
  result.checksum = net.weights().checksum();
  log->info("checkpoint {} (theta checksum {})", ckpt.string(), to_hex(result.checksum));
  return result;
}

RunResult cmd_run(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate();
  RunResult result;
  result.run_hash = run_hash(cfg, options.mode);
  result.run_dir = cfg.eval.output_dir / result.run_hash.substr(0, 8);

  json config_json = cfg.to_json();
  config_json["mode"] = to_string(options.mode);
  config_json["hash"] = result.run_hash;
  const fs::path config_file = result.run_dir / "config.json";
  if (fs::exists(config_file)) {
    if (read_json(config_file) != config_json) {
      throw ConfigError("run directory " + result.run_dir.string() +
                        " holds a different config with the same hash prefix; refusing to "
                        "overwrite");
    }
  } else {
    fs::create_directories(result.run_dir);
    write_json(config_file, config_json);
  }
  auto log = make_logger("run", result.run_dir / "run.log", options.quiet);
  log->info("run {} mode {} in {}", result.run_hash.substr(0, 8), to_string(options.mode),
            result.run_dir.string());

  const Backbone net = load_backbone(cfg.checkpoint_path());
  if (net.arch() != cfg.arch) {
    throw ConfigError("checkpoint " + cfg.checkpoint_path().string() +
                      " was trained with a different architecture");
  }
  result.theta_before = net.weights().checksum();
  log->info("theta checksum before adaptation {}", to_hex(result.theta_before));

  const auto cases = load_split(cfg.dataset.root, "test");
  if (cases.empty()) throw IoError((cfg.dataset.root / "test").string(), "no test cases");
  const std::size_t n = cases.size();

  // Reconstruction trajectories, reused from the run directory if present.
  std::vector<Trajectory> trajectories(n);
  std::atomic<std::size_t> cached{0};
  parallel_for(n, options.jobs, [&](std::size_t i) {
    const fs::path dir = result.run_dir / "trajectories" / cases[i].case_id;
    if (fs::exists(dir / "manifest.json")) {
      trajectories[i] = load_trajectory(dir);
      ++cached;
      return;
    }
    ReconConfig rc = cfg.recon;
    rc.noise_seed = mix_seed(cfg.recon.noise_seed, cases[i].seed);
    trajectories[i] = reconstruct(cases[i].measurement, rc, cases[i].case_id);
    if (options.save_trajectories) save_trajectory(dir, trajectories[i]);
  });
  result.trajectories_from_cache = cached == n;
  log->info("{} trajectories of length {} ({} from cache)", n, cfg.recon.steps,
            static_cast<std::size_t>(cached));

  std::vector<EnsembleResult> ensembles(n);
  const auto t0 = std::chrono::steady_clock::now();
  if (options.mode == RunMode::kBaseline) {
    parallel_for(n, options.jobs, [&](std::size_t i) {
      const ProbMap pm = net.forward(trajectories[i].steps.back().image);
      ensembles[i] = finalize(std::span<const ProbMap>(&pm, 1));
    });
  } else {
    const Modulator initial =
        Modulator::init(net.registry(), cfg.modulator, cfg.modulator_seed);
    AdaptConfig acfg = cfg.adapt;
    acfg.jobs = options.jobs;
    if (options.mode == RunMode::kLastOnlyAdapt) acfg.subset = TrajectorySubset::kOnlyLast;
    AdaptResult adapted;
    if (options.mode == RunMode::kIrttaSup) {
      std::vector<SegmentationMask> labels;
      for (const auto& c : cases) labels.push_back(c.mask);
      adapted = supervised_adapt(net, initial, trajectories, labels, acfg);
    } else {
      adapted = adapt(net, initial, trajectories, acfg);
    }
    parallel_for(n, options.jobs, [&](std::size_t i) {
      const auto maps = predict_trajectory(net, &adapted.for_case(i), trajectories[i]);
      ensembles[i] = finalize(maps);
    });
    int clamps = 0;
    for (const auto& r : adapted.reports) {
      clamps += r.clamp_events;
      log->info("adapt [{}] loss {:.6f} -> {:.6f} over {} steps", r.scope, r.initial_loss,
                r.final_loss, r.steps_run);
    }
    if (clamps > 0) log->warn("gamma clamped {} times during adaptation", clamps);
    fs::create_directories(result.run_dir / "modulators");
    for (std::size_t k = 0; k < adapted.modulators.size(); ++k) {
      const std::string name = adapted.modulators.size() == 1 ? "dataset" : cases[k].case_id;
      save_modulator(result.run_dir / "modulators" / (name + ".ckpt"), adapted.modulators[k]);
    }
    result.reports = std::move(adapted.reports);
  }
  result.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  result.theta_after = net.weights().checksum();
  log->info("theta checksum after adaptation {}", to_hex(result.theta_after));
  if (result.theta_after != result.theta_before) {
    throw TrainingError(cfg.adapt.steps, "backbone weights changed during adaptation");
  }

  result.cases.resize(n);
  parallel_for(n, options.jobs, [&](std::size_t i) {
    result.cases[i] =
        evaluate_case(cases[i].case_id, ensembles[i].mean_probs, cases[i].mask, cfg.eval.n_bins);
    save_ensemble(result.run_dir / "cases" / cases[i].case_id, ensembles[i],
                  cases[i].clean.height, cases[i].clean.width);
  });
  result.summary = aggregate(result.cases, to_string(options.mode));
  result.summary.runtime_s = result.runtime_s;

  write_case_csv(result.run_dir / "metrics.csv", result.cases);
  write_summary_csv(result.run_dir / "summary.csv", std::span<const Summary>(&result.summary, 1));
  json reports = json::array();
  for (const auto& r : result.reports) reports.push_back(r.to_json());
  write_json(result.run_dir / "adapt_report.json",
             {{"adapt", cfg.adapt.to_json()}, {"reports", reports}});
  write_json(result.run_dir / "run.json",
             {{"hash", result.run_hash},
              {"mode", to_string(options.mode)},
              {"runtime_s", result.runtime_s},
              {"checkpoint", cfg.checkpoint_path().string()},
              {"theta_before", to_hex(result.theta_before)},
              {"theta_after", to_hex(result.theta_after)},
              {"dataset_root", cfg.dataset.root.string()},
              {"n_bins", cfg.eval.n_bins}});
  log->info("mean foreground Dice {} ECE {} PRAUC {} runtime {:.2f} s",
            result.summary.mean_dice ? std::to_string(*result.summary.mean_dice) : "NA",
            result.summary.ece ? std::to_string(*result.summary.ece) : "NA",
            result.summary.prauc ? std::to_string(*result.summary.prauc) : "NA",
            result.runtime_s);
  return result;
}

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, AblationAxis axis,
                                    const std::vector<std::string>& values,
                                    const RunOptions& options) {
  if (values.empty()) throw ArgumentError("ablation needs at least one value");
  std::vector<AblationRow> rows;
  std::vector<Summary> summaries;
  for (const auto& value : values) {
    ExperimentConfig c = cfg;
    switch (axis) {
      case AblationAxis::kEmbSize:
        c.modulator.emb_dim = parse_value<int>("ablate", "emb_size", value);
        break;
      case AblationAxis::kSteps:
        c.adapt.steps = parse_value<int>("ablate", "steps", value);
        break;
      case AblationAxis::kS:
        c.recon.steps = parse_value<int>("ablate", "S", value);
        break;
      case AblationAxis::kSubset:
        c.adapt.subset = parse_subset(value);
        break;
      case AblationAxis::kGranularity:
        c.adapt.granularity = parse_granularity(value);
        break;
    }
    AblationRow row{value, cmd_run(c, options)};
    row.run.summary.label = to_string(axis) + "=" + value;
    summaries.push_back(row.run.summary);
    rows.push_back(std::move(row));
  }
  fs::create_directories(cfg.eval.output_dir);
  write_summary_csv(cfg.eval.output_dir / ("ablation_" + to_string(axis) + ".csv"), summaries);
  return rows;
}

Summary cmd_report(const fs::path& run_dir) {
  const json run = read_json(run_dir / "run.json");
  const fs::path root = run.at("dataset_root").get<std::string>();
  const int n_bins = run.at("n_bins").get<int>();
  const fs::path cases_dir = run_dir / "cases";
  if (!fs::is_directory(cases_dir)) throw IoError(cases_dir.string(), "no per-case outputs");

  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(cases_dir)) {
    if (fs::exists(entry.path() / "mean_probs.npy")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<CaseMetrics> metrics;
  for (const auto& dir : dirs) {
    const std::string id = dir.filename().string();
    const SyntheticCase gt = load_case(root / "test" / id);
    const npy::Array probs = npy::read(dir / "mean_probs.npy");
    metrics.push_back(evaluate_case(id, probs.as_double(), gt.mask, n_bins));
  }
  Summary s = aggregate(metrics, run.at("mode").get<std::string>());
  s.runtime_s = run.at("runtime_s").get<double>();
  write_case_csv(run_dir / "metrics.csv", metrics);
  write_summary_csv(run_dir / "summary.csv", std::span<const Summary>(&s, 1));
  return s;
}

}  // namespace trajtta
