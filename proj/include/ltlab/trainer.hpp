#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ltlab/common.hpp"
#include "ltlab/distribution.hpp"
#include "ltlab/losses.hpp"
#include "ltlab/metrics.hpp"
#include "ltlab/model.hpp"
#include "ltlab/optimizer.hpp"
#include "ltlab/samplers.hpp"

namespace ltlab {

enum class Stage2Kind { none, crt, tau_norm, lws, ncm, disalign, cosine_retrain };

inline constexpr std::array<std::pair<Stage2Kind, std::string_view>, 7> kStage2Names{{
    {Stage2Kind::none, "none"},
    {Stage2Kind::crt, "crt"},
    {Stage2Kind::tau_norm, "tau_norm"},
    {Stage2Kind::lws, "lws"},
    {Stage2Kind::ncm, "ncm"},
    {Stage2Kind::disalign, "disalign"},
    {Stage2Kind::cosine_retrain, "cosine_retrain"},
}};

struct Stage2Spec {
  Stage2Kind kind = Stage2Kind::none;
  double tau = 1.0;  // tau_norm only
  int epochs = 10;

  bool operator==(const Stage2Spec&) const = default;
};

struct ModelSpec {
  std::size_t hidden = 0;  // 0 = linear model on raw features
  ClassifierKind classifier = ClassifierKind::linear;
  double temperature = 16.0;

  bool operator==(const ModelSpec&) const = default;
};

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  LossSpec loss;
  SamplerSpec sampler;
  MixupSpec mixup;
  OptimizerSpec optimizer;
  ModelSpec model;
  Stage2Spec stage2;
  int eval_every = 1;
  /// Cumulative rank boundaries (h, m); roughly equal thirds when absent.
  std::optional<std::pair<std::size_t, std::size_t>> group_boundaries;
  /// Inference-time logit adjustment z - tau * log(pi).
  std::optional<double> posthoc_tau;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (stage2.epochs < 0) throw ConfigError("stage2 epochs must be >= 0");
    if (mixup.enabled && !(mixup.alpha > 0.0)) throw ConfigError("mixup alpha must be > 0");
    if (!(sampler.difficulty_floor > 0.0)) throw ConfigError("difficulty_floor must be > 0");
    if (model.classifier == ClassifierKind::nearest_mean)
      throw ConfigError("nearest_mean is a stage-2 head (use stage2 kind 'ncm')");
    loss.validate();
    optimizer.validate();
  }
};

/// Evaluation setting shared by all epochs of a run: group membership comes
/// from the train-split distribution.
struct Evaluator {
  ClassDistribution train_distribution;
  GroupSplit groups;
  std::optional<double> posthoc_tau;

  static Evaluator for_manifest(const Manifest& m, const TrainConfig& config) {
    Evaluator e;
    e.train_distribution = split_distribution(m, Split::train);
    e.groups = group_split(e.train_distribution,
                           config.group_boundaries.value_or(default_boundaries(m.num_classes)));
    e.posthoc_tau = config.posthoc_tau;
    return e;
  }

  std::vector<double> logits(const ModelState& model, std::span<const double> x) const {
    auto z = forward(model, x);
    if (posthoc_tau) z = posthoc_adjust(z, train_distribution, *posthoc_tau);
    return z;
  }

  /// Group report on one split; nullopt when the split has no records.
  std::optional<GroupReport> report(const ModelState& model, const Manifest& m, Split split) const {
    const auto idx = m.indices(split);
    if (idx.empty()) return std::nullopt;
    if (!m.is_multi_label()) {
      std::vector<int> pred(idx.size());
      std::vector<int> truth(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& r = m.records[idx[i]];
        pred[i] = static_cast<int>(argmax(logits(model, r.features)));
        truth[i] = r.label;
      }
      return group_report(pred, truth, groups);
    }
    Matrix scores(idx.size(), m.num_classes);
    std::vector<std::vector<int>> truth(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& r = m.records[idx[i]];
      const auto z = forward(model, r.features);
      std::copy(z.begin(), z.end(), scores.row(i).begin());
      truth[i] = r.labels;
    }
    auto aps = per_label_ap(scores, truth);
    double sum = 0.0;
    std::size_t n = 0;
    for (auto& ap : aps) {
      if (!ap) continue;
      *ap *= 100.0;
      sum += *ap;
      ++n;
    }
    if (n == 0) throw Error(std::string("no positive labels in the ") + to_string(split) + " split");
    auto rep = group_report_from_per_class(std::move(aps), groups);
    rep.mean_ap = sum / static_cast<double>(n);
    return rep;
  }
};

struct Stage1Result {
  ModelState model;
  RunHistory history;
};

namespace detail {

/// Trains the selected parameters of `model` for one epoch and returns the
/// mean batch objective.
inline double train_epoch(ModelState& model, const ParamSelection& sel, Optimizer& opt, Sampler& sampler,
                          const Loss& loss, std::span<const double> class_weight, const MixupSpec& mixup,
                          std::size_t batch_size, const Manifest& manifest, Rng& rng, int epoch) {
  const std::size_t length = sampler.epoch_length();
  const std::size_t steps = std::max<std::size_t>(1, (length + batch_size - 1) / batch_size);
  std::vector<double> params = flatten(model, sel);
  double loss_sum = 0.0;
  for (std::size_t step = 0; step < steps; ++step) {
    const std::size_t bs = length == 0 ? batch_size : std::min(batch_size, length - step * batch_size);
    const auto idx = sampler.next_indices(bs, rng);
    const Batch batch = Sampler::gather(manifest, idx);
    std::optional<MixedBatch> mixed;
    if (mixup.enabled) {
      auto partner = idx;
      std::shuffle(partner.begin(), partner.end(), rng);
      mixed = mixup_batch(batch, Sampler::gather(manifest, partner), mixup, rng);
    }
    // Stochastic losses draw from a per-step stream so both SAM passes see the
    // same perturbation and the outer stream advances identically.
    const std::uint64_t step_seed = rng();

    const auto sample_loss = [&](const Batch& b, std::size_t i, std::span<const double> z, Rng& lrng) {
      LossTarget t = manifest.is_multi_label() ? LossTarget::multi_hot(b.targets.row(i)) : LossTarget::single(b.labels[i]);
      auto r = loss.evaluate(z, t, &lrng, true);
      if (!class_weight.empty() && !manifest.is_multi_label()) {
        const double w = class_weight[static_cast<std::size_t>(b.labels[i])];
        r.value *= w;
        for (auto& g : r.grad) g *= w;
      }
      return r;
    };

    ModelState work = model;
    const GradientFn objective = [&](std::span<const double> p, std::vector<double>& grad) {
      unflatten(work, sel, p);
      ModelState g = zeros_like(work);
      Rng lrng(step_seed);
      const Matrix& x = mixed ? mixed->features : batch.features;
      const double inv = 1.0 / static_cast<double>(bs);
      double total = 0.0;
      for (std::size_t i = 0; i < bs; ++i) {
        const auto z = forward(work, x.row(i));
        LossResult r = sample_loss(batch, i, z, lrng);
        if (mixed) r = mix_losses(r, sample_loss(mixed->b, i, z, lrng), mixed->lambda);
        total += r.value;
        for (auto& v : r.grad) v *= inv;
        backward(work, x.row(i), r.grad, sel, g);
      }
      grad = flatten(g, sel);
      return total * inv;
    };

    double value = 0.0;
    try {
      value = opt.step(params, objective);
    } catch (const Error& e) {
      throw DivergenceError(epoch, static_cast<int>(step), e.what());
    }
    if (!all_finite(params)) throw DivergenceError(epoch, static_cast<int>(step), "non-finite parameters");
    loss_sum += value;
  }
  unflatten(model, sel, params);
  return loss_sum / static_cast<double>(steps);
}

inline std::vector<double> per_class_fraction(const GroupReport& r) {
  std::vector<double> a(r.per_class.size(), 1.0);
  for (std::size_t c = 0; c < a.size(); ++c)
    if (r.per_class[c]) a[c] = *r.per_class[c] / 100.0;
  return a;
}

inline LossSpec head_loss(const Manifest& m) {
  LossSpec s;
  s.kind = m.is_multi_label() ? LossKind::bce_ml : LossKind::ce;
  return s;
}

/// Trains only the `sel` blocks of `model` for `epochs` epochs.
inline void train_head(ModelState& model, const ParamSelection& sel, const Manifest& manifest,
                       const TrainConfig& config, SamplerKind sampler_kind, std::span<const double> class_weight,
                       Rng& rng) {
  const auto dist = split_distribution(manifest, Split::train);
  SamplerSpec ss;
  ss.kind = sampler_kind;
  Sampler sampler(ss, manifest);
  const Loss loss(head_loss(manifest), dist);
  Optimizer opt(config.optimizer, flatten(model, sel).size());
  const MixupSpec no_mixup;
  for (int e = 0; e < config.stage2.epochs; ++e)
    train_epoch(model, sel, opt, sampler, loss, class_weight, no_mixup, config.batch_size, manifest, rng, e + 1);
}

inline void reinit_classifier(ModelState& model, ClassifierKind kind, double temperature, Rng& rng) {
  model.classifier = kind;
  std::normal_distribution<double> init(0.0, 0.01);
  for (auto& w : model.weight.data) w = init(rng);
  if (kind == ClassifierKind::linear)
    model.bias.assign(model.num_classes(), 0.0);
  else
    model.bias.clear();
  model.temperature = temperature;
  reset_calibration(model);
}

}  // namespace detail

/// First-stage training with the configured sampler, loss, mixup and
/// optimizer. Records one history entry per epoch.
inline Stage1Result train_stage1(const Manifest& manifest, const TrainConfig& config, Rng& rng) {
  config.validate();
  if (manifest.is_multi_label() != is_multi_label_loss(config.loss.kind))
    throw ConfigError(std::string("loss '") + std::string(to_string(config.loss.kind)) +
                      "' does not match the manifest task kind");
  const Evaluator eval = Evaluator::for_manifest(manifest, config);
  Stage1Result out;
  out.model = init_model(manifest.feature_dim, manifest.num_classes, config.model.hidden, config.model.classifier,
                         config.model.temperature, rng);
  const ParamSelection sel = ParamSelection::full(out.model);
  Sampler sampler(config.sampler, manifest);
  const Loss loss(config.loss, eval.train_distribution);
  Optimizer opt(config.optimizer, flatten(out.model, sel).size());

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = detail::train_epoch(out.model, sel, opt, sampler, loss, {}, config.mixup, config.batch_size,
                                         manifest, rng, epoch);
    const bool scheduled = epoch % config.eval_every == 0 || epoch == config.epochs;
    const bool need_val = scheduled || config.sampler.kind == SamplerKind::difficulty;
    std::optional<GroupReport> val;
    if (need_val) val = eval.report(out.model, manifest, Split::val);
    if (config.sampler.kind == SamplerKind::difficulty) {
      if (!val) throw ConfigError("difficulty sampling needs a validation split");
      sampler.update_difficulty(detail::per_class_fraction(*val));
    }
    if (scheduled) {
      rec.val = std::move(val);
      rec.test = eval.report(out.model, manifest, Split::test);
    }
    rec.weight_norms = weight_norms(out.model);
    out.history.epochs.push_back(std::move(rec));
  }
  return out;
}

/// Classifier re-training: encoder frozen, classifier re-initialized and
/// trained with class-balanced sampling.
inline ModelState stage2_crt(const ModelState& model, const Manifest& manifest, const TrainConfig& config, Rng& rng) {
  ModelState m = model;
  detail::reinit_classifier(m, ClassifierKind::linear, m.temperature, rng);
  ParamSelection sel;
  sel.weight = true;
  sel.bias = true;
  detail::train_head(m, sel, manifest, config, SamplerKind::class_balanced, {}, rng);
  return m;
}

/// Learnable per-class scale on the frozen classifier's logits.
inline ModelState stage2_lws(const ModelState& model, const Manifest& manifest, const TrainConfig& config, Rng& rng) {
  ModelState m = model;
  reset_calibration(m);
  ParamSelection sel;
  sel.logit_scale = true;
  detail::train_head(m, sel, manifest, config, SamplerKind::class_balanced, {}, rng);
  return m;
}

/// Per-class affine logit calibration z' = sigma * z + mu trained with
/// inverse-frequency class weights (normalized to sum K).
inline ModelState stage2_disalign(const ModelState& model, const Manifest& manifest, const TrainConfig& config,
                                  Rng& rng) {
  ModelState m = model;
  reset_calibration(m);
  const auto dist = split_distribution(manifest, Split::train);
  std::vector<double> w(dist.num_classes());
  for (std::size_t c = 0; c < w.size(); ++c) {
    if (dist.counts[c] == 0) throw Error("disalign: class " + std::to_string(c) + " has no samples");
    w[c] = 1.0 / static_cast<double>(dist.counts[c]);
  }
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v *= static_cast<double>(w.size()) / sum;
  ParamSelection sel;
  sel.logit_scale = true;
  sel.logit_offset = true;
  detail::train_head(m, sel, manifest, config, SamplerKind::original, w, rng);
  return m;
}

/// Cosine classifier re-trained from scratch on the frozen encoder with
/// class-balanced sampling.
inline ModelState stage2_cosine_retrain(const ModelState& model, const Manifest& manifest, const TrainConfig& config,
                                        Rng& rng) {
  ModelState m = model;
  detail::reinit_classifier(m, ClassifierKind::cosine, config.model.temperature, rng);
  ParamSelection sel;
  sel.weight = true;
  sel.temperature = true;
  detail::train_head(m, sel, manifest, config, SamplerKind::class_balanced, {}, rng);
  return m;
}

/// Nearest-class-mean head: class means of encoder outputs over the train
/// split; logits are negative Euclidean distances (lower index wins ties).
inline ModelState stage2_ncm(const ModelState& model, const Manifest& manifest) {
  ModelState m = model;
  const std::size_t k = manifest.num_classes;
  const std::size_t f = model.feature_dim();
  Matrix sums(k, f);
  std::vector<double> n(k, 0.0);
  for (const auto& r : manifest.records) {
    if (r.split != Split::train) continue;
    const auto phi = embed(model, r.features);
    for (std::size_t c = 0; c < k; ++c) {
      const bool member = manifest.is_multi_label() ? r.labels[c] != 0 : static_cast<std::size_t>(r.label) == c;
      if (!member) continue;
      n[c] += 1.0;
      auto row = sums.row(c);
      for (std::size_t j = 0; j < f; ++j) row[j] += phi[j];
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (n[c] == 0.0) throw Error("ncm: class " + std::to_string(c) + " has no train samples");
    for (auto& v : sums.row(c)) v /= n[c];
  }
  m.classifier = ClassifierKind::nearest_mean;
  m.weight = std::move(sums);
  m.bias.clear();
  reset_calibration(m);
  return m;
}

/// Runs the configured second stage (identity for `none`).
inline ModelState apply_stage2(const ModelState& model, const Manifest& manifest, const TrainConfig& config, Rng& rng) {
  switch (config.stage2.kind) {
    case Stage2Kind::none: return model;
    case Stage2Kind::crt: return stage2_crt(model, manifest, config, rng);
    case Stage2Kind::tau_norm: return tau_normalize(model, config.stage2.tau);
    case Stage2Kind::lws: return stage2_lws(model, manifest, config, rng);
    case Stage2Kind::ncm: return stage2_ncm(model, manifest);
    case Stage2Kind::disalign: return stage2_disalign(model, manifest, config, rng);
    case Stage2Kind::cosine_retrain: return stage2_cosine_retrain(model, manifest, config, rng);
  }
  throw Error("unknown stage2 kind");
}

}  // namespace ltlab
