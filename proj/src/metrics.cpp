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

#include "trajtta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "trajtta/errors.hpp"

namespace trajtta {

std::optional<double> dice(std::span<const std::int32_t> pred, std::span<const std::int32_t> gt,
                           int cls) {
  if (pred.size() != gt.size()) {
    throw ShapeError("dice inputs have " + std::to_string(pred.size()) + " and " +
                     std::to_string(gt.size()) + " pixels");
  }
  std::size_t p = 0;
  std::size_t g = 0;
  std::size_t both = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const bool in_p = pred[k] == cls;
    const bool in_g = gt[k] == cls;
    p += in_p;
    g += in_g;
    both += in_p && in_g;
  }
  if (g == 0) return std::nullopt;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::optional<double> dice(std::span<const SegmentationMask> pred,
                           std::span<const SegmentationMask> gt, int cls) {
  if (pred.size() != gt.size()) throw ShapeError("dice volumes differ in slice count");
  std::vector<std::int32_t> a;
  std::vector<std::int32_t> b;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].height != gt[s].height || pred[s].width != gt[s].width) {
      throw ShapeError("dice slice " + std::to_string(s) + " differs in size");
    }
    a.insert(a.end(), pred[s].labels.begin(), pred[s].labels.end());
    b.insert(b.end(), gt[s].labels.begin(), gt[s].labels.end());
  }
  return dice(std::span<const std::int32_t>(a), std::span<const std::int32_t>(b), cls);
}

BinStats calibration_bins(std::span<const double> confidence, std::span<const std::uint8_t> correct,
                          int n_bins) {
  if (confidence.empty()) throw ArgumentError("calibration needs at least one pixel");
  if (confidence.size() != correct.size()) {
    throw ArgumentError("confidence and correctness arrays differ in length");
  }
  if (n_bins < 1) throw ArgumentError("n_bins must be >= 1");

  const auto n = static_cast<std::size_t>(n_bins);
  std::vector<double> edges(n + 1);
  for (std::size_t k = 0; k <= n; ++k) edges[k] = static_cast<double>(k) / n_bins;

  BinStats stats;
  stats.total = confidence.size();
  stats.bins.resize(n);
  std::vector<double> conf_sum(n, 0.0);
  std::vector<double> acc_sum(n, 0.0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const double c = confidence[i];
    if (!(c >= 0.0 && c <= 1.0)) {
      throw ArgumentError("confidence " + std::to_string(c) + " outside [0, 1]");
    }
    auto b = std::min(n - 1, static_cast<std::size_t>(c * n_bins));
    while (b > 0 && c < edges[b]) --b;
    while (b + 1 < n && c >= edges[b + 1]) ++b;
    ++stats.bins[b].count;
    conf_sum[b] += c;
    acc_sum[b] += correct[i] != 0 ? 1.0 : 0.0;
  }
  for (std::size_t b = 0; b < n; ++b) {
    auto& bin = stats.bins[b];
    bin.lower = edges[b];
    bin.upper = edges[b + 1];
    if (bin.count > 0) {
      bin.mean_confidence = conf_sum[b] / static_cast<double>(bin.count);
      bin.mean_accuracy = acc_sum[b] / static_cast<double>(bin.count);
    }
  }
  return stats;
}

double ece(std::span<const double> confidence, std::span<const std::uint8_t> correct, int n_bins) {
  const BinStats stats = calibration_bins(confidence, correct, n_bins);
  double total = 0.0;
  for (const auto& bin : stats.bins) {
    if (bin.count == 0) continue;
    total += static_cast<double>(bin.count) / static_cast<double>(stats.total) *
             std::abs(bin.mean_confidence - bin.mean_accuracy);
  }
  return total;
}

std::optional<double> prauc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) {
    throw ArgumentError("score and label arrays differ in length");
  }
  const auto n_pos = static_cast<std::size_t>(
      std::count_if(positive.begin(), positive.end(), [](std::uint8_t v) { return v != 0; }));
  if (n_pos == 0) return std::nullopt;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double area = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      if (positive[order[i]] != 0) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

CaseMetrics evaluate_case(const std::string& case_id, std::span<const double> mean_probs,
                          const SegmentationMask& gt, int n_bins) {
  const int c = gt.num_classes;
  const std::size_t d = gt.labels.size();
  if (mean_probs.size() != d * static_cast<std::size_t>(c)) {
    throw ShapeError("probabilities do not match the ground truth of case '" + case_id + "'");
  }
  std::vector<std::int32_t> pred(d);
  std::vector<double> confidence(d);
  std::vector<std::uint8_t> correct(d);
  std::vector<double> fluid(d);
  std::vector<std::uint8_t> fluid_gt(d);
  for (std::size_t p = 0; p < d; ++p) {
    const double* row = mean_probs.data() + p * static_cast<std::size_t>(c);
    int best = 0;
    double fg = 0.0;
    for (int k = 1; k < c; ++k) {
      if (row[k] > row[best]) best = k;
      fg += row[k];
    }
    pred[p] = best;
    confidence[p] = std::clamp(row[best], 0.0, 1.0);
    correct[p] = best == gt.labels[p];
    fluid[p] = std::clamp(fg, 0.0, 1.0);
    fluid_gt[p] = gt.labels[p] != 0;
  }

  CaseMetrics m;
  m.case_id = case_id;
  m.num_classes = c;
  m.dice.assign(static_cast<std::size_t>(c), std::nullopt);
  for (int k = 1; k < c; ++k) {
    m.dice[static_cast<std::size_t>(k)] =
        dice(std::span<const std::int32_t>(pred), std::span<const std::int32_t>(gt.labels), k);
  }
  m.ece = ece(confidence, correct, n_bins);
  m.prauc = prauc(fluid, fluid_gt);
  return m;
}

namespace {

ClassSummary summarize(const std::vector<double>& values) {
  ClassSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (const double v : values) var += (v - mean) * (v - mean);
  s.mean = mean;
  s.std = std::sqrt(var / n);
  return s;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << *v;
  return os.str();
}

}  // namespace

Summary aggregate(std::span<const CaseMetrics> cases, const std::string& label) {
  Summary s;
  s.label = label;
  s.cases = cases.size();
  for (const auto& c : cases) s.num_classes = std::max(s.num_classes, c.num_classes);
  s.dice.resize(static_cast<std::size_t>(std::max(s.num_classes, 1)));
  std::vector<double> class_means;
  for (int k = 1; k < s.num_classes; ++k) {
    std::vector<double> values;
    for (const auto& c : cases) {
      if (static_cast<std::size_t>(k) < c.dice.size() && c.dice[static_cast<std::size_t>(k)]) {
        values.push_back(*c.dice[static_cast<std::size_t>(k)]);
      }
    }
    s.dice[static_cast<std::size_t>(k)] = summarize(values);
    if (s.dice[static_cast<std::size_t>(k)].mean) {
      class_means.push_back(*s.dice[static_cast<std::size_t>(k)].mean);
    }
  }
  if (!class_means.empty()) {
    s.mean_dice = std::accumulate(class_means.begin(), class_means.end(), 0.0) /
                  static_cast<double>(class_means.size());
  }
  std::vector<double> eces;
  std::vector<double> praucs;
  for (const auto& c : cases) {
    eces.push_back(c.ece);
    if (c.prauc) praucs.push_back(*c.prauc);
  }
  s.ece = summarize(eces).mean;
  s.prauc = summarize(praucs).mean;
  s.prauc_count = praucs.size();
  return s;
}

std::string summary_csv(std::span<const Summary> rows) {
  int classes = 0;
  for (const auto& r : rows) classes = std::max(classes, r.num_classes);
  std::ostringstream os;
  os << "label";
  for (int k = 1; k < classes; ++k) {
    os << ",dice_c" << k << ",std_c" << k << ",n_c" << k;
  }
  os << ",dice_mean,ece,prauc,cases,runtime_s\n";
  for (const auto& r : rows) {
    os << r.label;
    for (int k = 1; k < classes; ++k) {
      const auto idx = static_cast<std::size_t>(k);
      if (idx < r.dice.size()) {
        const auto& d = r.dice[idx];
        os << ',' << fmt(d.mean) << ',' << (d.mean ? fmt(d.std) : "NA") << ',' << d.count;
      } else {
        os << ",NA,NA,0";
      }
    }
    os << ',' << fmt(r.mean_dice) << ',' << fmt(r.ece) << ',' << fmt(r.prauc) << ',' << r.cases
       << ',' << fmt(r.runtime_s) << '\n';
  }
  return os.str();
}

void write_summary_csv(const std::filesystem::path& path, std::span<const Summary> rows) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out << "# prauc: step-wise average precision, no interpolation; std: population\n"
      << summary_csv(rows);
  if (!out) throw IoError(path.string(), "write failed");
}

void write_case_csv(const std::filesystem::path& path, std::span<const CaseMetrics> cases) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  int classes = 0;
  for (const auto& c : cases) classes = std::max(classes, c.num_classes);
  out << "case_id";
  for (int k = 1; k < classes; ++k) out << ",dice_c" << k;
  out << ",ece,prauc\n";
  for (const auto& c : cases) {
    out << c.case_id;
    for (int k = 1; k < classes; ++k) {
      const auto idx = static_cast<std::size_t>(k);
      out << ',' << fmt(idx < c.dice.size() ? c.dice[idx] : std::nullopt);
    }
    out << ',' << fmt(c.ece) << ',' << fmt(c.prauc) << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

}  // namespace trajtta
