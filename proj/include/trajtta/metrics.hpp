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
#include <span>
#include <string>
#include <vector>

#include "trajtta/image.hpp"

namespace trajtta {

// 2|P & G| / (|P| + |G|) for class c pooled over every slice of a volume;
// empty when the ground truth has no pixel of c. Throws ShapeError on
// misaligned volumes.
std::optional<double> dice(std::span<const SegmentationMask> pred,
                           std::span<const SegmentationMask> gt, int cls);
std::optional<double> dice(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                           int cls);

struct BinStats {
  struct Bin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double mean_accuracy = 0.0;
  };
  std::vector<Bin> bins;
  std::size_t total = 0;
};

// Equal-width bins on [0, 1]; bin b holds lower_b <= conf < upper_b and the
// last bin also holds conf == 1. Throws ArgumentError for empty or
// mismatched inputs, n_bins < 1 or confidences outside [0, 1].
BinStats calibration_bins(std::span<const double> confidence, std::span<const std::uint8_t> correct,
                          int n_bins);
// sum_b (count_b / N) |mean_conf_b - mean_acc_b|
double ece(std::span<const double> confidence, std::span<const std::uint8_t> correct,
           int n_bins = 15);

// Step-wise average precision: sum_k (R_k - R_{k-1}) P_k over distinct
// score thresholds, equal scores grouped. Empty when there is no positive.
std::optional<double> prauc(std::span<const double> scores, std::span<const std::uint8_t> positive);

struct CaseMetrics {
  std::string case_id;
  int num_classes = 0;
  std::vector<std::optional<double>> dice;  // index c for c in [1, C); index 0 unused
  double ece = 0.0;
  std::optional<double> prauc;
};

// Scores one case from its pixel-major mean probabilities: confidence is
// the max class probability, the binary fluid score sums classes 1..C-1.
CaseMetrics evaluate_case(const std::string& case_id, std::span<const double> mean_probs,
                          const SegmentationMask& gt, int n_bins = 15);

struct ClassSummary {
  std::optional<double> mean;
  double std = 0.0;  // population standard deviation
  std::size_t count = 0;
};

struct Summary {
  std::string label;
  int num_classes = 0;
  std::vector<ClassSummary> dice;  // index c for c in [1, C)
  std::optional<double> mean_dice;  // mean of the defined class means
  std::optional<double> ece;
  std::optional<double> prauc;
  std::size_t prauc_count = 0;
  std::size_t cases = 0;
  std::optional<double> runtime_s;
};

Summary aggregate(std::span<const CaseMetrics> cases, const std::string& label = "");

// One row per summary: label, per-class mean/std/count, mean, ece, prauc,
// runtime. Absent values are written as NA.
std::string summary_csv(std::span<const Summary> rows);
void write_summary_csv(const std::filesystem::path& path, std::span<const Summary> rows);

// Per-case CSV: case_id, dice per class, ece, prauc.
void write_case_csv(const std::filesystem::path& path, std::span<const CaseMetrics> cases);

}  // namespace trajtta
