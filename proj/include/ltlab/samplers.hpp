#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ltlab/common.hpp"
#include "ltlab/distribution.hpp"

namespace ltlab {

enum class SamplerKind { original, class_balanced, difficulty };

struct SamplerSpec {
  SamplerKind kind = SamplerKind::original;
  /// Floor applied to per-class validation accuracy before inversion.
  double difficulty_floor = 0.01;
  /// Draws per epoch; defaults to the train-set size.
  std::optional<std::size_t> epoch_length;
};

struct MixupSpec {
  bool enabled = false;
  double alpha = 0.2;
};

/// A mini-batch gathered from a manifest. `targets` holds the binary label
/// matrix for multi-label manifests and is empty otherwise.
struct Batch {
  Matrix features;
  std::vector<int> labels;
  Matrix targets;

  std::size_t size() const { return features.rows; }
};

/// Draws training batches with replacement according to a SamplerSpec.
class Sampler {
 public:
  Sampler(SamplerSpec spec, const Manifest& manifest, Split split = Split::train)
      : spec_(spec), num_classes_(manifest.num_classes) {
    if (!(spec_.difficulty_floor > 0.0)) throw Error("difficulty_floor must be > 0");
    by_class_.resize(num_classes_);
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
      const auto& r = manifest.records[i];
      if (r.split != split) continue;
      pool_.push_back(i);
      if (manifest.is_multi_label()) {
        for (std::size_t c = 0; c < num_classes_; ++c)
          if (r.labels[c] != 0) by_class_[c].push_back(i);
      } else {
        by_class_[static_cast<std::size_t>(r.label)].push_back(i);
      }
    }
    if (pool_.empty()) throw Error(std::string("no ") + to_string(split) + " records to sample from");
    accuracy_.assign(num_classes_, 1.0);
    rebuild_class_distribution();
  }

  const SamplerSpec& spec() const { return spec_; }

  std::size_t epoch_length() const { return spec_.epoch_length.value_or(pool_.size()); }

  /// Probability of drawing each class under the class-conditional kinds.
  const std::vector<double>& class_probabilities() const { return class_prob_; }

  /// Replaces the stored per-class validation accuracies used by the
  /// difficulty kind.
  void update_difficulty(std::span<const double> per_class_accuracy) {
    if (per_class_accuracy.size() != num_classes_)
      throw Error("update_difficulty expects " + std::to_string(num_classes_) + " accuracies, got " +
                  std::to_string(per_class_accuracy.size()));
    accuracy_.assign(per_class_accuracy.begin(), per_class_accuracy.end());
    rebuild_class_distribution();
  }

  /// Record indices (into the manifest) of the next `batch_size` draws.
  std::vector<std::size_t> next_indices(std::size_t batch_size, Rng& rng) {
    std::vector<std::size_t> out(batch_size);
    if (spec_.kind == SamplerKind::original) {
      std::uniform_int_distribution<std::size_t> pick(0, pool_.size() - 1);
      for (auto& i : out) i = pool_[pick(rng)];
      return out;
    }
    for (std::size_t c = 0; c < num_classes_; ++c)
      if (by_class_[c].empty() && class_prob_[c] > 0.0)
        throw Error("class " + std::to_string(c) + " has no samples for class-conditional sampling");
    for (auto& i : out) {
      const std::size_t c = class_draw_(rng);
      const auto& members = by_class_[c];
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      i = members[pick(rng)];
    }
    return out;
  }

  Batch next_batch(const Manifest& manifest, std::size_t batch_size, Rng& rng) {
    return gather(manifest, next_indices(batch_size, rng));
  }

  static Batch gather(const Manifest& manifest, std::span<const std::size_t> indices) {
    Batch b;
    b.features = Matrix(indices.size(), manifest.feature_dim);
    if (manifest.is_multi_label())
      b.targets = Matrix(indices.size(), manifest.num_classes);
    else
      b.labels.resize(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const auto& r = manifest.records[indices[k]];
      std::copy(r.features.begin(), r.features.end(), b.features.row(k).begin());
      if (manifest.is_multi_label()) {
        for (std::size_t c = 0; c < manifest.num_classes; ++c) b.targets(k, c) = r.labels[c];
      } else {
        b.labels[k] = r.label;
      }
    }
    return b;
  }

 private:
  void rebuild_class_distribution() {
    class_prob_.assign(num_classes_, 0.0);
    if (spec_.kind == SamplerKind::class_balanced) {
      std::fill(class_prob_.begin(), class_prob_.end(), 1.0);
    } else if (spec_.kind == SamplerKind::difficulty) {
      for (std::size_t c = 0; c < num_classes_; ++c)
        class_prob_[c] = 1.0 / std::max(accuracy_[c], spec_.difficulty_floor);
    } else {
      return;
    }
    const double total = std::accumulate(class_prob_.begin(), class_prob_.end(), 0.0);
    for (auto& p : class_prob_) p /= total;
    class_draw_ = std::discrete_distribution<std::size_t>(class_prob_.begin(), class_prob_.end());
  }

  SamplerSpec spec_;
  std::size_t num_classes_;
  std::vector<std::size_t> pool_;
  std::vector<std::vector<std::size_t>> by_class_;
  std::vector<double> accuracy_;
  std::vector<double> class_prob_;
  std::discrete_distribution<std::size_t> class_draw_;
};

/// Convex combination of two equally sized batches; the training loss on it
/// is lambda * L(y_a) + (1 - lambda) * L(y_b).
struct MixedBatch {
  Matrix features;
  Batch a;
  Batch b;
  double lambda = 1.0;
};

inline MixedBatch mixup_with_lambda(const Batch& a, const Batch& b, double lambda) {
  if (a.size() != b.size() || a.features.cols != b.features.cols)
    throw Error("mixup batches differ in size or feature dimension");
  MixedBatch m;
  m.features = Matrix(a.features.rows, a.features.cols);
  for (std::size_t i = 0; i < m.features.data.size(); ++i)
    m.features.data[i] = lambda * a.features.data[i] + (1.0 - lambda) * b.features.data[i];
  m.a = a;
  m.b = b;
  m.lambda = lambda;
  return m;
}

/// Draws one lambda ~ Beta(alpha, alpha) for the whole batch.
inline MixedBatch mixup_batch(const Batch& a, const Batch& b, const MixupSpec& spec, Rng& rng) {
  if (!(spec.alpha > 0.0)) throw Error("mixup alpha must be > 0");
  if (a.size() != b.size() || a.features.cols != b.features.cols)
    throw Error("mixup batches differ in size or feature dimension");
  return mixup_with_lambda(a, b, sample_beta(spec.alpha, spec.alpha, rng));
}

}  // namespace ltlab
