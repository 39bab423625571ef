#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ltlab/common.hpp"

namespace ltlab {

/// Per-class sample counts of a training set together with the derived label
/// frequencies and the descending-count rank order.
struct ClassDistribution {
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;
  std::vector<double> frequencies;
  /// Class indices sorted by descending count; ties go to the lower index.
  std::vector<std::size_t> rank_order;
  /// Classes with zero samples. Allowed, but some losses reject them.
  std::vector<std::size_t> empty_classes;

  std::size_t num_classes() const { return counts.size(); }

  std::int64_t max_count() const { return counts[rank_order.front()]; }
  std::int64_t min_count() const { return counts[rank_order.back()]; }

  /// n_max / n_min; infinite when some class is empty.
  double imbalance_ratio() const {
    const auto lo = min_count();
    if (lo == 0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(max_count()) / static_cast<double>(lo);
  }

  /// Builds a distribution from raw per-class counts.
  static ClassDistribution from_counts(std::vector<std::int64_t> counts) {
    if (counts.empty()) throw Error("empty dataset");
    ClassDistribution d;
    d.counts = std::move(counts);
    for (std::size_t c = 0; c < d.counts.size(); ++c) {
      if (d.counts[c] < 0) throw Error("negative count for class " + std::to_string(c));
      d.total += d.counts[c];
      if (d.counts[c] == 0) d.empty_classes.push_back(c);
    }
    if (d.total == 0) throw Error("empty dataset");
    d.frequencies.resize(d.counts.size());
    for (std::size_t c = 0; c < d.counts.size(); ++c)
      d.frequencies[c] = static_cast<double>(d.counts[c]) / static_cast<double>(d.total);
    d.rank_order.resize(d.counts.size());
    std::iota(d.rank_order.begin(), d.rank_order.end(), std::size_t{0});
    std::stable_sort(d.rank_order.begin(), d.rank_order.end(),
                     [&](std::size_t a, std::size_t b) { return d.counts[a] > d.counts[b]; });
    return d;
  }
};

inline ClassDistribution compute_distribution(std::span<const int> labels, std::size_t num_classes) {
  if (labels.empty()) throw Error("empty dataset");
  std::vector<std::int64_t> counts(num_classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw Error("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    ++counts[static_cast<std::size_t>(y)];
  }
  return ClassDistribution::from_counts(std::move(counts));
}

enum class Split { train, val, test };
enum class TaskKind { single_label, multi_label };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error("unknown split '" + s + "'");
}

struct Record {
  std::string id;
  std::vector<double> features;
  /// Single-label target; -1 for multi-label records.
  int label = -1;
  /// Multi-label binary indicator vector (length K); empty for single-label.
  std::vector<int> labels;
  Split split = Split::train;

  bool operator==(const Record&) const = default;
};

struct Manifest {
  std::vector<Record> records;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  TaskKind task = TaskKind::single_label;

  bool operator==(const Manifest&) const = default;

  bool is_multi_label() const { return task == TaskKind::multi_label; }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].split == s) out.push_back(i);
    return out;
  }

  /// Throws if any record disagrees with the header fields.
  void validate() const {
    if (num_classes < 1) throw Error("manifest needs num_classes >= 1");
    for (const auto& r : records) {
      if (r.features.size() != feature_dim)
        throw Error("record '" + r.id + "' has " + std::to_string(r.features.size()) +
                    " features, expected " + std::to_string(feature_dim));
      if (task == TaskKind::single_label) {
        if (r.label < 0 || static_cast<std::size_t>(r.label) >= num_classes || !r.labels.empty())
          throw Error("record '" + r.id + "' has an invalid single-label target");
      } else {
        if (r.labels.size() != num_classes || r.label != -1)
          throw Error("record '" + r.id + "' label vector must have length " +
                      std::to_string(num_classes));
        for (int v : r.labels)
          if (v != 0 && v != 1) throw Error("record '" + r.id + "' has a non-binary label entry");
      }
    }
  }
};

/// Per-class counts over one split. Multi-label manifests count positives.
inline ClassDistribution split_distribution(const Manifest& m, Split s) {
  std::vector<std::int64_t> counts(m.num_classes, 0);
  bool any = false;
  for (const auto& r : m.records) {
    if (r.split != s) continue;
    any = true;
    if (m.is_multi_label()) {
      for (std::size_t c = 0; c < m.num_classes; ++c) counts[c] += r.labels[c];
    } else {
      ++counts[static_cast<std::size_t>(r.label)];
    }
  }
  if (!any) throw Error(std::string("empty dataset: no ") + to_string(s) + " records");
  return ClassDistribution::from_counts(std::move(counts));
}

/// Long-tailed per-class targets N_c = floor(N0 * r^(-c/(K-1))), clamped to
/// at least one sample per class.
inline std::vector<std::int64_t> pareto_targets(std::int64_t n0, std::size_t num_classes, double ratio) {
  if (num_classes < 2) throw Error("pareto_targets needs at least 2 classes");
  if (!(ratio >= 1.0) || !std::isfinite(ratio)) throw Error("imbalance ratio must be >= 1");
  if (n0 < 1) throw Error("N0 must be >= 1");
  std::vector<std::int64_t> out(num_classes);
  const double denom = static_cast<double>(num_classes - 1);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double v = static_cast<double>(n0) * std::pow(ratio, -static_cast<double>(c) / denom);
    const double nearest = std::round(v);
    // Snap values that are an integer up to rounding noise (1000 * 100^-0.5).
    const double f = std::abs(v - nearest) <= 1e-9 * std::max(1.0, v) ? nearest : std::floor(v);
    out[c] = std::max<std::int64_t>(1, static_cast<std::int64_t>(f));
  }
  // pow is not guaranteed monotone in the last ulp.
  for (std::size_t c = 1; c < num_classes; ++c) out[c] = std::min(out[c], out[c - 1]);
  return out;
}

/// Keeps exactly `targets[c]` train records of every class, drawn uniformly
/// without replacement (classes visited in rank order). Val and test records
/// and the original record order are preserved.
inline Manifest subsample_longtail(const Manifest& manifest, std::span<const std::int64_t> targets,
                                   std::uint64_t seed) {
  if (manifest.is_multi_label()) throw Error("Pareto subsetting defined for single-label only");
  if (targets.size() != manifest.num_classes)
    throw Error("expected " + std::to_string(manifest.num_classes) + " targets, got " +
                std::to_string(targets.size()));
  std::vector<std::vector<std::size_t>> by_class(manifest.num_classes);
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.split == Split::train) by_class[static_cast<std::size_t>(r.label)].push_back(i);
  }
  std::vector<std::int64_t> counts(manifest.num_classes);
  for (std::size_t c = 0; c < manifest.num_classes; ++c) {
    counts[c] = static_cast<std::int64_t>(by_class[c].size());
    if (targets[c] < 0) throw Error("negative target for class " + std::to_string(c));
    if (counts[c] < targets[c])
      throw Error("class " + std::to_string(c) + " has " + std::to_string(counts[c]) +
                  " train samples, short by " + std::to_string(targets[c] - counts[c]));
  }
  std::vector<std::size_t> rank(manifest.num_classes);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  std::stable_sort(rank.begin(), rank.end(), [&](auto a, auto b) { return counts[a] > counts[b]; });

  Rng rng(seed);
  std::vector<bool> keep(manifest.records.size(), true);
  for (std::size_t c : rank) {
    auto& idx = by_class[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = static_cast<std::size_t>(targets[c]); k < idx.size(); ++k) keep[idx[k]] = false;
  }
  Manifest out = manifest;
  out.records.clear();
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    if (keep[i]) out.records.push_back(manifest.records[i]);
  return out;
}

/// Head / medium / tail class sets at cumulative rank boundaries (h, m).
struct GroupSplit {
  std::size_t head_end = 0;
  std::size_t medium_end = 0;
  std::size_t num_classes = 0;
  std::vector<std::size_t> head;
  std::vector<std::size_t> medium;
  std::vector<std::size_t> tail;

  const std::vector<std::size_t>& group(int g) const {
    return g == 0 ? head : (g == 1 ? medium : tail);
  }
};

inline GroupSplit group_split(const ClassDistribution& dist, std::pair<std::size_t, std::size_t> boundaries) {
  const auto [h, m] = boundaries;
  const std::size_t k = dist.num_classes();
  if (!(0 < h && h < m && m <= k))
    throw Error("group boundaries must satisfy 0 < h < m <= K (got h=" + std::to_string(h) +
                ", m=" + std::to_string(m) + ", K=" + std::to_string(k) + ")");
  GroupSplit g;
  g.head_end = h;
  g.medium_end = m;
  g.num_classes = k;
  g.head.assign(dist.rank_order.begin(), dist.rank_order.begin() + static_cast<std::ptrdiff_t>(h));
  g.medium.assign(dist.rank_order.begin() + static_cast<std::ptrdiff_t>(h),
                  dist.rank_order.begin() + static_cast<std::ptrdiff_t>(m));
  g.tail.assign(dist.rank_order.begin() + static_cast<std::ptrdiff_t>(m), dist.rank_order.end());
  return g;
}

/// Roughly equal thirds, used when no boundaries are configured.
inline std::pair<std::size_t, std::size_t> default_boundaries(std::size_t num_classes) {
  if (num_classes < 3) return {1, num_classes};
  const std::size_t h = std::max<std::size_t>(1, (num_classes + 1) / 3);
  const std::size_t m = std::max(h + 1, (2 * num_classes + 1) / 3);
  return {h, m};
}

/// Mean number of positive labels per record.
inline double label_cardinality(const Manifest& manifest) {
  if (!manifest.is_multi_label()) throw Error("label cardinality requires a multi-label manifest");
  if (manifest.records.empty()) throw Error("empty dataset");
  double sum = 0.0;
  for (const auto& r : manifest.records) sum += std::accumulate(r.labels.begin(), r.labels.end(), 0);
  return sum / static_cast<double>(manifest.records.size());
}

struct SynthSpec {
  std::size_t num_classes = 10;
  std::size_t feature_dim = 16;
  std::int64_t n0 = 1000;
  double imbalance_ratio = 100.0;
  double class_separation = 4.0;
  std::int64_t val_per_class = 100;
  std::int64_t test_per_class = 100;
  std::uint64_t seed = 0;
};

/// Centre of class c: evenly spaced on a circle of radius `class_separation`
/// in the plane of the first two coordinates.
inline std::vector<double> synth_class_mean(const SynthSpec& spec, std::size_t c) {
  std::vector<double> mu(spec.feature_dim, 0.0);
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(spec.num_classes);
  mu[0] = spec.class_separation * std::cos(angle);
  mu[1] = spec.class_separation * std::sin(angle);
  return mu;
}

/// Gaussian blobs with unit isotropic spread. Train counts follow
/// pareto_targets(n0, K, r); val and test are balanced.
inline Manifest synth_gaussian(const SynthSpec& spec) {
  if (spec.num_classes < 2) throw Error("synth needs K >= 2");
  if (spec.feature_dim < 2) throw Error("synth needs d >= 2");
  if (spec.val_per_class < 0 || spec.test_per_class < 0) throw Error("negative per-class split size");
  if (!(spec.class_separation >= 0.0)) throw Error("class_separation must be >= 0");
  const auto train_counts = pareto_targets(spec.n0, spec.num_classes, spec.imbalance_ratio);

  Manifest m;
  m.num_classes = spec.num_classes;
  m.feature_dim = spec.feature_dim;
  m.task = TaskKind::single_label;
  Rng rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto emit = [&](Split split, std::size_t c, std::int64_t count) {
    const auto mu = synth_class_mean(spec, c);
    for (std::int64_t i = 0; i < count; ++i) {
      Record r;
      r.id = std::string(to_string(split)) + "-" + std::to_string(c) + "-" + std::to_string(i);
      r.features.resize(spec.feature_dim);
      for (std::size_t j = 0; j < spec.feature_dim; ++j) r.features[j] = mu[j] + noise(rng);
      r.label = static_cast<int>(c);
      r.split = split;
      m.records.push_back(std::move(r));
    }
  };
  for (std::size_t c = 0; c < spec.num_classes; ++c) emit(Split::train, c, train_counts[c]);
  for (std::size_t c = 0; c < spec.num_classes; ++c) emit(Split::val, c, spec.val_per_class);
  for (std::size_t c = 0; c < spec.num_classes; ++c) emit(Split::test, c, spec.test_per_class);
  return m;
}

}  // namespace ltlab
