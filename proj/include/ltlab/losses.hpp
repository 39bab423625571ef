#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ltlab/common.hpp"
#include "ltlab/distribution.hpp"

namespace ltlab {

enum class LossKind {
  ce,
  focal,
  cb_ce,
  cb_focal,
  ldam,
  prior_ce,
  weighted_softmax,
  balanced_softmax,
  logit_adjust,
  vs,
  seql,
  gcl,
  label_smooth_lt,
  bce_ml,
  focal_bce_ml,
};

inline constexpr std::array<std::pair<LossKind, std::string_view>, 15> kLossKindNames{{
    {LossKind::ce, "ce"},
    {LossKind::focal, "focal"},
    {LossKind::cb_ce, "cb_ce"},
    {LossKind::cb_focal, "cb_focal"},
    {LossKind::ldam, "ldam"},
    {LossKind::prior_ce, "prior_ce"},
    {LossKind::weighted_softmax, "weighted_softmax"},
    {LossKind::balanced_softmax, "balanced_softmax"},
    {LossKind::logit_adjust, "logit_adjust"},
    {LossKind::vs, "vs"},
    {LossKind::seql, "seql"},
    {LossKind::gcl, "gcl"},
    {LossKind::label_smooth_lt, "label_smooth_lt"},
    {LossKind::bce_ml, "bce_ml"},
    {LossKind::focal_bce_ml, "focal_bce_ml"},
}};

inline std::string_view to_string(LossKind k) {
  for (const auto& [kind, name] : kLossKindNames)
    if (kind == k) return name;
  return "?";
}

inline std::optional<LossKind> parse_loss_kind(std::string_view name) {
  for (const auto& [kind, name_] : kLossKindNames)
    if (name_ == name) return kind;
  return std::nullopt;
}

inline bool is_multi_label_loss(LossKind k) { return k == LossKind::bce_ml || k == LossKind::focal_bce_ml; }

/// One loss kind and all of its hyperparameters. Fields that a kind does not
/// use are ignored.
struct LossSpec {
  LossKind kind = LossKind::ce;
  // focal, cb_focal, focal_bce_ml
  double alpha = 1.0;
  double gamma = 2.0;
  // cb_ce, cb_focal
  double beta = 0.9999;
  // ldam
  double max_margin = 0.5;
  double scale = 30.0;
  // logit_adjust
  double tau = 1.0;
  // vs
  double vs_gamma = 0.3;
  double vs_tau = 1.0;
  // seql: classes with frequency below `threshold` are dropped from the
  // softmax with probability `suppress_prob`.
  double threshold = 0.05;
  double suppress_prob = 0.9;
  // gcl
  double amplitude = 1.0;
  // label_smooth_lt
  double eps_head = 0.1;
  double eps_tail = 0.0;

  bool operator==(const LossSpec&) const = default;

  void validate() const {
    const auto bad = [&](const std::string& what) {
      return ConfigError(std::string(to_string(kind)) + ": " + what);
    };
    switch (kind) {
      case LossKind::focal:
      case LossKind::focal_bce_ml:
        if (!(gamma >= 0.0)) throw bad("gamma must be >= 0");
        if (!(alpha > 0.0)) throw bad("alpha must be > 0");
        break;
      case LossKind::cb_focal:
        if (!(gamma >= 0.0)) throw bad("gamma must be >= 0");
        if (!(alpha > 0.0)) throw bad("alpha must be > 0");
        [[fallthrough]];
      case LossKind::cb_ce:
        if (!(beta >= 0.0 && beta < 1.0)) throw bad("beta must lie in [0, 1)");
        break;
      case LossKind::ldam:
        if (!(max_margin >= 0.0)) throw bad("max_margin must be >= 0");
        if (!(scale > 0.0)) throw bad("scale must be > 0");
        break;
      case LossKind::logit_adjust:
        if (!std::isfinite(tau)) throw bad("tau must be finite");
        break;
      case LossKind::vs:
        if (!std::isfinite(vs_gamma) || !std::isfinite(vs_tau)) throw bad("gamma and tau must be finite");
        break;
      case LossKind::seql:
        if (!(threshold >= 0.0 && threshold <= 1.0)) throw bad("threshold must lie in [0, 1]");
        if (!(suppress_prob >= 0.0 && suppress_prob <= 1.0)) throw bad("q must lie in [0, 1]");
        break;
      case LossKind::gcl:
        if (!(amplitude >= 0.0)) throw bad("amplitude must be >= 0");
        break;
      case LossKind::label_smooth_lt:
        if (!(eps_head >= 0.0 && eps_head < 1.0) || !(eps_tail >= 0.0 && eps_tail < 1.0))
          throw bad("smoothing must lie in [0, 1)");
        break;
      default:
        break;
    }
  }
};

/// Single-label index or a multi-label indicator vector.
struct LossTarget {
  int label = -1;
  std::span<const double> multi;

  static LossTarget single(int y) { return {y, {}}; }
  static LossTarget multi_hot(std::span<const double> t) { return {-1, t}; }
};

/// Everything a loss needs besides logits and target. The generator is only
/// touched by seql and gcl, and only in training mode.
struct LossContext {
  const ClassDistribution* distribution = nullptr;
  Rng* rng = nullptr;
  bool training = true;
};

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;
};

/// Class-balanced weights (1 - beta) / (1 - beta^n_c), normalized to sum K.
inline std::vector<double> cb_weights(const ClassDistribution& dist, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw Error("cb_weights: beta must lie in [0, 1)");
  const std::size_t k = dist.num_classes();
  std::vector<double> w(k);
  // 1 - beta^n = -expm1(n * log(beta)); log1p keeps precision as beta -> 1.
  const double log_beta = std::log1p(beta - 1.0);
  for (std::size_t c = 0; c < k; ++c) {
    if (dist.counts[c] < 1) throw Error("cb_weights: class " + std::to_string(c) + " has no samples");
    const double effective = -std::expm1(static_cast<double>(dist.counts[c]) * log_beta);
    w[c] = (1.0 - beta) / effective;
  }
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v *= static_cast<double>(k) / sum;
  return w;
}

/// Inference-time adjustment z - tau * log(pi).
inline std::vector<double> posthoc_adjust(std::span<const double> logits, const ClassDistribution& dist, double tau) {
  if (logits.size() != dist.num_classes()) throw Error("posthoc_adjust: logits/class count mismatch");
  std::vector<double> out(logits.begin(), logits.end());
  if (tau == 0.0) return out;
  for (std::size_t c = 0; c < out.size(); ++c) {
    if (dist.counts[c] == 0) throw Error("posthoc_adjust: class " + std::to_string(c) + " has no samples");
    out[c] -= tau * std::log(dist.frequencies[c]);
  }
  return out;
}

/// LDAM per-class margins C / n_c^(1/4), with C chosen so the rarest class
/// gets `max_margin`.
inline std::vector<double> ldam_margins(const ClassDistribution& dist, double max_margin) {
  const double c_const = max_margin * std::pow(static_cast<double>(dist.min_count()), 0.25);
  std::vector<double> m(dist.num_classes());
  for (std::size_t c = 0; c < m.size(); ++c) m[c] = c_const / std::pow(static_cast<double>(dist.counts[c]), 0.25);
  return m;
}

/// Relative rarity in [0, 1] on a log-count scale: 0 for the most frequent
/// class, 1 for the rarest. All zeros when every class has the same count.
inline std::vector<double> log_rarity(const ClassDistribution& dist) {
  const double lmax = std::log(static_cast<double>(dist.max_count()));
  const double lmin = std::log(static_cast<double>(dist.min_count()));
  std::vector<double> a(dist.num_classes(), 0.0);
  if (lmax == lmin) return a;
  for (std::size_t c = 0; c < a.size(); ++c)
    a[c] = (lmax - std::log(static_cast<double>(dist.counts[c]))) / (lmax - lmin);
  return a;
}

/// GCL noise amplitude per class; largest for the tail.
inline std::vector<double> gcl_amplitudes(const ClassDistribution& dist) { return log_rarity(dist); }

/// Per-class smoothing for label_smooth_lt: eps_head for the most frequent
/// class, eps_tail for the rarest, log-linear in between.
inline std::vector<double> smoothing_per_class(const ClassDistribution& dist, double eps_head, double eps_tail) {
  auto rarity = log_rarity(dist);
  for (auto& r : rarity) r = eps_head + (eps_tail - eps_head) * r;
  return rarity;
}

/// A loss kind bound to a class distribution, with per-class constants
/// precomputed.
class Loss {
 public:
  Loss(LossSpec spec, const ClassDistribution& dist) : spec_(spec), k_(dist.num_classes()) {
    spec_.validate();
    if (k_ < 2) throw Error("losses need K >= 2");
    if (needs_nonempty_classes())
      for (std::size_t c = 0; c < k_; ++c)
        if (dist.counts[c] == 0)
          throw Error(std::string(to_string(spec_.kind)) + ": class " + std::to_string(c) + " has no samples");

    log_prior_.resize(k_);
    for (std::size_t c = 0; c < k_; ++c)
      log_prior_[c] = dist.counts[c] > 0 ? std::log(dist.frequencies[c]) : -std::numeric_limits<double>::infinity();
    frequencies_ = dist.frequencies;

    switch (spec_.kind) {
      case LossKind::cb_ce:
      case LossKind::cb_focal:
        class_weight_ = cb_weights(dist, spec_.beta);
        break;
      case LossKind::ldam:
        margin_ = ldam_margins(dist, spec_.max_margin);
        break;
      case LossKind::vs:
        scale_.resize(k_);
        for (std::size_t c = 0; c < k_; ++c)
          scale_[c] = std::pow(static_cast<double>(dist.counts[c]) / static_cast<double>(dist.max_count()), spec_.vs_gamma);
        break;
      case LossKind::gcl:
        amplitude_ = gcl_amplitudes(dist);
        break;
      case LossKind::label_smooth_lt:
        smoothing_ = smoothing_per_class(dist, spec_.eps_head, spec_.eps_tail);
        break;
      default:
        break;
    }
  }

  const LossSpec& spec() const { return spec_; }
  std::size_t num_classes() const { return k_; }

  /// Value and gradient with respect to the logits, from a single draw of
  /// any stochastic perturbation.
  LossResult evaluate(std::span<const double> z, const LossTarget& target, Rng* rng, bool training) const {
    if (z.size() != k_)
      throw Error("logit length " + std::to_string(z.size()) + " does not match K=" + std::to_string(k_));
    if (is_multi_label_loss(spec_.kind)) {
      if (target.multi.size() != k_) throw Error("multi-label loss needs a length-K target vector");
      return spec_.kind == LossKind::bce_ml ? bce(z, target.multi) : focal_bce(z, target.multi);
    }
    if (target.label < 0 || static_cast<std::size_t>(target.label) >= k_)
      throw Error("target " + std::to_string(target.label) + " outside [0, " + std::to_string(k_) + ")");
    const auto y = static_cast<std::size_t>(target.label);

    switch (spec_.kind) {
      case LossKind::focal:
        return focal(z, y, 1.0);
      case LossKind::cb_focal:
        return focal(z, y, class_weight_[y]);
      default:
        break;
    }

    // Everything else is a (weighted) cross-entropy over affinely adjusted
    // logits u_c = a_c * z_c + o_c on a subset of classes, against a target
    // distribution q.
    std::vector<double> a(k_, 1.0);
    std::vector<double> o(k_, 0.0);
    std::vector<char> active(k_, 1);
    double weight = 1.0;
    std::vector<double> q(k_, 0.0);
    q[y] = 1.0;

    switch (spec_.kind) {
      case LossKind::ce:
        break;
      case LossKind::cb_ce:
        weight = class_weight_[y];
        break;
      case LossKind::ldam:
        std::fill(a.begin(), a.end(), spec_.scale);
        o[y] = -spec_.scale * margin_[y];
        break;
      case LossKind::prior_ce:
      case LossKind::balanced_softmax:
        o = log_prior_;
        break;
      case LossKind::weighted_softmax:
        weight = 1.0 - log_prior_[y];
        break;
      case LossKind::logit_adjust:
        if (spec_.tau != 0.0)
          for (std::size_t c = 0; c < k_; ++c) o[c] = spec_.tau * log_prior_[c];
        break;
      case LossKind::vs:
        a = scale_;
        if (spec_.vs_tau != 0.0)
          for (std::size_t c = 0; c < k_; ++c) o[c] = spec_.vs_tau * log_prior_[c];
        break;
      case LossKind::seql:
        if (training) {
          if (rng == nullptr) throw Error("seql needs a random generator in training mode");
          std::uniform_real_distribution<double> unit(0.0, 1.0);
          for (std::size_t c = 0; c < k_; ++c) {
            if (c == y || frequencies_[c] >= spec_.threshold) continue;
            if (unit(*rng) < spec_.suppress_prob) active[c] = 0;
          }
        }
        break;
      case LossKind::gcl:
        if (training) {
          if (rng == nullptr) throw Error("gcl needs a random generator in training mode");
          std::normal_distribution<double> noise(0.0, 1.0);
          for (std::size_t c = 0; c < k_; ++c) o[c] = -spec_.amplitude * amplitude_[c] * std::abs(noise(*rng));
        }
        break;
      case LossKind::label_smooth_lt: {
        const double eps = smoothing_[y];
        const double off = eps / static_cast<double>(k_ - 1);
        std::fill(q.begin(), q.end(), off);
        q[y] = 1.0 - eps;
        break;
      }
      default:
        throw Error("unhandled loss kind");
    }

    std::vector<double> u;
    std::vector<std::size_t> idx;
    for (std::size_t c = 0; c < k_; ++c) {
      if (!active[c]) continue;
      idx.push_back(c);
      u.push_back(a[c] * z[c] + o[c]);
    }
    const double lse = log_sum_exp(u);
    LossResult r;
    r.grad.assign(k_, 0.0);
    double value = 0.0;
    std::vector<double> p(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) p[i] = std::exp(u[i] - lse);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::size_t c = idx[i];
      if (q[c] != 0.0) value += q[c] * neg_log_softmax(u, i);
      double diff = p[i] - q[c];
      if (q[c] >= 0.5) {
        // p_c - q_c as a difference of the other classes' mass; avoids
        // cancellation when p_c is close to 1.
        double p_rest = 0.0, q_rest = 0.0;
        for (std::size_t j = 0; j < idx.size(); ++j) {
          if (j == i) continue;
          p_rest += p[j];
          q_rest += q[idx[j]];
        }
        diff = q_rest - p_rest;
      }
      r.grad[c] = weight * a[c] * diff;
    }
    r.value = weight * value;
    return r;
  }

  double value(std::span<const double> z, const LossTarget& t, Rng* rng, bool training) const {
    return evaluate(z, t, rng, training).value;
  }

 private:
  bool needs_nonempty_classes() const {
    switch (spec_.kind) {
      case LossKind::cb_ce:
      case LossKind::cb_focal:
      case LossKind::ldam:
      case LossKind::prior_ce:
      case LossKind::weighted_softmax:
      case LossKind::balanced_softmax:
      case LossKind::vs:
      case LossKind::gcl:
      case LossKind::label_smooth_lt:
        return true;
      case LossKind::logit_adjust:
        return spec_.tau != 0.0;
      default:
        return false;
    }
  }

  // -alpha (1 - p_y)^gamma log p_y over plain softmax, scaled by `weight`.
  LossResult focal(std::span<const double> z, std::size_t y, double weight) const {
    const double lse = log_sum_exp(z);
    std::vector<double> p(k_);
    double rest = 0.0;  // 1 - p_y, summed directly for precision near p_y = 1
    for (std::size_t c = 0; c < k_; ++c) {
      p[c] = std::exp(z[c] - lse);
      if (c != y) rest += p[c];
    }
    const double log_py = -neg_log_softmax(z, y);
    const double g = spec_.gamma;
    const double mod = std::pow(rest, g);
    LossResult r;
    r.value = -weight * spec_.alpha * mod * log_py;
    // dL/dz_j = coef * (delta_jy - p_j), coef = alpha (g (1-p)^(g-1) p log p - (1-p)^g).
    double term = 0.0;
    if (g != 0.0 && rest > 0.0) term = g * std::pow(rest, g - 1.0) * p[y] * log_py;
    const double coef = weight * spec_.alpha * (term - mod);
    r.grad.resize(k_);
    for (std::size_t c = 0; c < k_; ++c) r.grad[c] = coef * ((c == y ? 1.0 : 0.0) - p[c]);
    return r;
  }

  LossResult bce(std::span<const double> z, std::span<const double> t) const {
    LossResult r;
    r.grad.resize(k_);
    for (std::size_t c = 0; c < k_; ++c) {
      r.value += t[c] * softplus(-z[c]) + (1.0 - t[c]) * softplus(z[c]);
      r.grad[c] = sigmoid(z[c]) - t[c];
    }
    return r;
  }

  LossResult focal_bce(std::span<const double> z, std::span<const double> t) const {
    LossResult r;
    r.grad.resize(k_);
    const double g = spec_.gamma;
    for (std::size_t c = 0; c < k_; ++c) {
      const double sign = t[c] > 0.5 ? 1.0 : -1.0;
      const double s = sign * z[c];
      const double p = sigmoid(s);       // probability of the observed outcome
      const double miss = sigmoid(-s);   // 1 - p
      const double log_p = -softplus(-s);
      const double mod = std::pow(miss, g);
      r.value += -spec_.alpha * mod * log_p;
      const double ds = spec_.alpha * (g * p * mod * log_p - mod * miss);
      r.grad[c] = sign * ds;
    }
    return r;
  }

  LossSpec spec_;
  std::size_t k_;
  std::vector<double> log_prior_;
  std::vector<double> frequencies_;
  std::vector<double> class_weight_;
  std::vector<double> margin_;
  std::vector<double> scale_;
  std::vector<double> amplitude_;
  std::vector<double> smoothing_;
};

/// Mixup objective lambda * L(y_a) + (1 - lambda) * L(y_b) at shared logits.
inline LossResult mix_losses(const LossResult& a, const LossResult& b, double lambda) {
  if (a.grad.size() != b.grad.size()) throw Error("mix_losses: gradient length mismatch");
  LossResult r;
  r.value = lambda * a.value + (1.0 - lambda) * b.value;
  r.grad.resize(a.grad.size());
  for (std::size_t c = 0; c < r.grad.size(); ++c) r.grad[c] = lambda * a.grad[c] + (1.0 - lambda) * b.grad[c];
  return r;
}

inline const ClassDistribution& require_distribution(const LossContext& ctx, std::size_t k) {
  if (ctx.distribution == nullptr) throw Error("loss context has no class distribution");
  if (ctx.distribution->num_classes() != k)
    throw Error("class distribution has K=" + std::to_string(ctx.distribution->num_classes()) +
                " but logits have length " + std::to_string(k));
  return *ctx.distribution;
}

/// Loss value for one sample. Stochastic kinds consume `ctx.rng`; pass copies
/// of the same generator state to loss_value and loss_grad to evaluate both at
/// one draw.
inline double loss_value(const LossSpec& spec, std::span<const double> logits, const LossTarget& target,
                         const LossContext& ctx) {
  const auto& dist = require_distribution(ctx, logits.size());
  return Loss(spec, dist).evaluate(logits, target, ctx.rng, ctx.training).value;
}

/// Gradient of loss_value with respect to the logits.
inline std::vector<double> loss_grad(const LossSpec& spec, std::span<const double> logits, const LossTarget& target,
                                     const LossContext& ctx) {
  const auto& dist = require_distribution(ctx, logits.size());
  return Loss(spec, dist).evaluate(logits, target, ctx.rng, ctx.training).grad;
}

}  // namespace ltlab
