#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ltlab/common.hpp"
#include "ltlab/distribution.hpp"

namespace ltlab {

/// Head / medium / tail summary in percent. Group values are macro means over
/// member classes (each class counts once, regardless of its sample count);
/// `average` is the unweighted mean of the three groups. A group with no
/// member classes at all (K < 3, or m = K) is NaN and left out of `average`.
struct GroupReport {
  /// Percent per class; nullopt for classes without evaluation samples.
  std::vector<std::optional<double>> per_class;
  double head = 0.0;
  double medium = 0.0;
  double tail = 0.0;
  double average = 0.0;
  /// Classes left out of their group mean because they had no samples.
  std::vector<std::size_t> excluded_classes;
  /// Multi-label runs also carry mAP (percent) over all labels.
  std::optional<double> mean_ap;

  bool operator==(const GroupReport&) const = default;
};

inline double group_average(double head, double medium, double tail) { return (head + medium + tail) / 3.0; }

/// Groups per-class scores (in percent) by `split`.
inline GroupReport group_report_from_per_class(std::vector<std::optional<double>> per_class, const GroupSplit& split) {
  if (per_class.size() != split.num_classes)
    throw Error("per-class score count " + std::to_string(per_class.size()) + " does not match K=" +
                std::to_string(split.num_classes));
  GroupReport r;
  r.per_class = std::move(per_class);
  static constexpr const char* kNames[] = {"head", "medium", "tail"};
  double values[3];
  double present = 0.0;
  double total = 0.0;
  for (int g = 0; g < 3; ++g) {
    if (split.group(g).empty()) {
      values[g] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c : split.group(g)) {
      if (!r.per_class[c]) continue;
      sum += *r.per_class[c];
      ++n;
    }
    if (n == 0) throw Error(std::string(kNames[g]) + " group has no classes with evaluation samples");
    values[g] = sum / static_cast<double>(n);
    total += values[g];
    present += 1.0;
  }
  for (std::size_t c = 0; c < r.per_class.size(); ++c)
    if (!r.per_class[c]) r.excluded_classes.push_back(c);
  r.head = values[0];
  r.medium = values[1];
  r.tail = values[2];
  r.average = present == 3.0 ? group_average(r.head, r.medium, r.tail) : total / present;
  return r;
}

/// Top-1 accuracy per class, grouped by `split`.
inline GroupReport group_report(std::span<const int> predictions, std::span<const int> truths, const GroupSplit& split) {
  if (predictions.size() != truths.size()) throw Error("predictions and truths differ in length");
  const std::size_t k = split.num_classes;
  std::vector<std::int64_t> correct(k, 0);
  std::vector<std::int64_t> total(k, 0);
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const int y = truths[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw Error("truth label " + std::to_string(y) + " outside [0, K)");
    ++total[static_cast<std::size_t>(y)];
    if (predictions[i] == y) ++correct[static_cast<std::size_t>(y)];
  }
  std::vector<std::optional<double>> per_class(k);
  for (std::size_t c = 0; c < k; ++c)
    if (total[c] > 0) per_class[c] = 100.0 * static_cast<double>(correct[c]) / static_cast<double>(total[c]);
  return group_report_from_per_class(std::move(per_class), split);
}

/// Average precision of one label: scores ranked descending, ties broken by
/// ascending sample index. nullopt when the label has no positives.
inline std::optional<double> average_precision(std::span<const double> scores, std::span<const int> truth) {
  if (scores.size() != truth.size()) throw Error("scores and truths differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (truth[order[rank]] == 0) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(rank + 1);
  }
  if (hits == 0.0) return std::nullopt;
  return sum / hits;
}

/// Per-label AP for an n x K score matrix against an n x K binary truth matrix.
inline std::vector<std::optional<double>> per_label_ap(const Matrix& scores, const std::vector<std::vector<int>>& truths) {
  if (truths.size() != scores.rows) throw Error("score and truth row counts differ");
  std::vector<std::optional<double>> out(scores.cols);
  std::vector<double> col(scores.rows);
  std::vector<int> tcol(scores.rows);
  for (std::size_t c = 0; c < scores.cols; ++c) {
    for (std::size_t i = 0; i < scores.rows; ++i) {
      if (truths[i].size() != scores.cols) throw Error("truth row has wrong length");
      col[i] = scores(i, c);
      tcol[i] = truths[i][c];
    }
    out[c] = average_precision(col, tcol);
  }
  return out;
}

/// Mean of per-label AP over labels with at least one positive (fraction in
/// [0, 1]). Labels without positives are skipped and reported through
/// `skipped` when given.
inline double mean_average_precision(const Matrix& scores, const std::vector<std::vector<int>>& truths,
                                     std::vector<std::size_t>* skipped = nullptr) {
  const auto aps = per_label_ap(scores, truths);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < aps.size(); ++c) {
    if (aps[c]) {
      sum += *aps[c];
      ++n;
    } else if (skipped) {
      skipped->push_back(c);
    }
  }
  if (n == 0) throw Error("mean_average_precision: no positive labels anywhere");
  return sum / static_cast<double>(n);
}

/// One completed epoch. Reports are absent on epochs skipped by eval_every or
/// when the split is empty.
struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<GroupReport> val;
  std::optional<GroupReport> test;
  std::vector<double> weight_norms;

  bool operator==(const EpochRecord&) const = default;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;

  bool operator==(const RunHistory&) const = default;
};

struct CheckpointGaps {
  /// Best test average over all epochs minus test average at the
  /// validation-selected epoch (never negative).
  double gap_best = 0.0;
  /// Test average at the validation-selected epoch minus the final epoch's.
  /// Negative when the final epoch beats the selected one.
  double gap_final = 0.0;
  std::size_t epoch_best_val = 0;
  std::size_t epoch_best_test = 0;
};

/// Gap analysis over parallel val/test average curves (0-based epochs).
inline CheckpointGaps checkpoint_gaps(std::span<const double> val, std::span<const double> test) {
  if (val.empty()) throw Error("checkpoint_gaps: empty history");
  if (val.size() != test.size()) throw Error("checkpoint_gaps: val and test curves differ in length");
  CheckpointGaps g;
  g.epoch_best_val = static_cast<std::size_t>(std::max_element(val.begin(), val.end()) - val.begin());
  g.epoch_best_test = static_cast<std::size_t>(std::max_element(test.begin(), test.end()) - test.begin());
  g.gap_best = test[g.epoch_best_test] - test[g.epoch_best_val];
  g.gap_final = test[g.epoch_best_val] - test.back();
  return g;
}

/// Same analysis over the epochs of a history that carry both reports,
/// comparing the `average` fields. Returned epoch indices are positions in
/// that filtered sequence.
inline CheckpointGaps checkpoint_gaps(const RunHistory& history) {
  std::vector<double> val;
  std::vector<double> test;
  for (const auto& e : history.epochs) {
    if (!e.val || !e.test) continue;
    val.push_back(e.val->average);
    test.push_back(e.test->average);
  }
  return checkpoint_gaps(val, test);
}

inline double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw Error("pearson_correlation needs two equal-length samples (n >= 2)");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Population standard deviation over mean.
inline double coefficient_of_variation(std::span<const double> v) {
  if (v.empty()) throw Error("coefficient_of_variation of an empty sample");
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  if (mean == 0.0) return 0.0;
  return std::sqrt(ss / n) / std::abs(mean);
}

/// Correlation between log class counts and classifier row norms.
inline double norm_count_correlation(const ClassDistribution& dist, std::span<const double> norms) {
  std::vector<double> log_n(dist.num_classes());
  for (std::size_t c = 0; c < log_n.size(); ++c) {
    if (dist.counts[c] == 0) throw Error("norm_count_correlation: class " + std::to_string(c) + " is empty");
    log_n[c] = std::log(static_cast<double>(dist.counts[c]));
  }
  return pearson_correlation(log_n, norms);
}

}  // namespace ltlab
