#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ltlab/common.hpp"

namespace ltlab {

enum class ClassifierKind { linear, cosine, nearest_mean };

inline const char* to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::linear: return "linear";
    case ClassifierKind::cosine: return "cosine";
    case ClassifierKind::nearest_mean: return "nearest_mean";
  }
  return "?";
}

/// Optional hidden layer: phi(x) = relu(weight * x + bias).
struct Encoder {
  Matrix weight;  // hidden x input
  std::vector<double> bias;

  bool operator==(const Encoder&) const = default;
};

/// Classifier parameters plus an optional encoder and a per-class affine
/// calibration z' = logit_scale * z + logit_offset applied to the head output.
///
/// - linear: z_c = w_c . phi + b_c
/// - cosine: z_c = temperature * cos(w_c, phi), no bias
/// - nearest_mean: z_c = -||phi - w_c||, rows of `weight` are class means
struct ModelState {
  std::size_t input_dim = 0;
  std::optional<Encoder> encoder;
  ClassifierKind classifier = ClassifierKind::linear;
  Matrix weight;  // K x feature_dim
  std::vector<double> bias;
  double temperature = 16.0;
  std::vector<double> logit_scale;
  std::vector<double> logit_offset;

  bool operator==(const ModelState&) const = default;

  std::size_t num_classes() const { return weight.rows; }
  std::size_t feature_dim() const { return weight.cols; }
};

/// Which parameter blocks an optimizer sees; everything else is frozen.
struct ParamSelection {
  bool encoder = false;
  bool weight = false;
  bool bias = false;
  bool temperature = false;
  bool logit_scale = false;
  bool logit_offset = false;

  static ParamSelection full(const ModelState& m) {
    ParamSelection s;
    s.encoder = m.encoder.has_value();
    s.weight = m.classifier != ClassifierKind::nearest_mean;
    s.bias = m.classifier == ClassifierKind::linear;
    s.temperature = m.classifier == ClassifierKind::cosine;
    return s;
  }
};

inline void reset_calibration(ModelState& m) {
  m.logit_scale.assign(m.num_classes(), 1.0);
  m.logit_offset.assign(m.num_classes(), 0.0);
}

/// Fresh model: encoder He-normal, classifier N(0, init_scale^2), zero bias.
inline ModelState init_model(std::size_t input_dim, std::size_t num_classes, std::size_t hidden,
                             ClassifierKind kind, double temperature, Rng& rng, double init_scale = 0.01) {
  if (input_dim == 0 || num_classes < 2) throw Error("model needs input_dim >= 1 and K >= 2");
  if (kind == ClassifierKind::nearest_mean) throw Error("nearest_mean heads are built by stage2_ncm");
  ModelState m;
  m.input_dim = input_dim;
  m.classifier = kind;
  m.temperature = temperature;
  std::size_t f = input_dim;
  if (hidden > 0) {
    Encoder e;
    e.weight = Matrix(hidden, input_dim);
    e.bias.assign(hidden, 0.0);
    std::normal_distribution<double> he(0.0, std::sqrt(2.0 / static_cast<double>(input_dim)));
    for (auto& w : e.weight.data) w = he(rng);
    m.encoder = std::move(e);
    f = hidden;
  }
  m.weight = Matrix(num_classes, f);
  std::normal_distribution<double> init(0.0, init_scale);
  for (auto& w : m.weight.data) w = init(rng);
  if (kind == ClassifierKind::linear) m.bias.assign(num_classes, 0.0);
  reset_calibration(m);
  return m;
}

inline void check_input(const ModelState& m, std::span<const double> x) {
  if (x.size() != m.input_dim)
    throw Error("feature length " + std::to_string(x.size()) + " does not match model input " +
                std::to_string(m.input_dim));
}

/// Encoder output (the input itself when there is no hidden layer).
inline std::vector<double> embed(const ModelState& m, std::span<const double> x) {
  check_input(m, x);
  if (!m.encoder) return {x.begin(), x.end()};
  const auto& e = *m.encoder;
  std::vector<double> h(e.weight.rows);
  for (std::size_t j = 0; j < h.size(); ++j) h[j] = std::max(0.0, dot(e.weight.row(j), x) + e.bias[j]);
  return h;
}

namespace detail {

inline constexpr double kNormFloor = 1e-12;

inline std::vector<double> head_logits(const ModelState& m, std::span<const double> phi) {
  const std::size_t k = m.num_classes();
  std::vector<double> z(k);
  switch (m.classifier) {
    case ClassifierKind::linear:
      for (std::size_t c = 0; c < k; ++c) z[c] = dot(m.weight.row(c), phi) + m.bias[c];
      break;
    case ClassifierKind::cosine: {
      const double pn = std::max(l2_norm(phi), kNormFloor);
      for (std::size_t c = 0; c < k; ++c) {
        const double wn = std::max(l2_norm(m.weight.row(c)), kNormFloor);
        z[c] = m.temperature * dot(m.weight.row(c), phi) / (wn * pn);
      }
      break;
    }
    case ClassifierKind::nearest_mean:
      for (std::size_t c = 0; c < k; ++c) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < phi.size(); ++j) {
          const double d = phi[j] - m.weight(c, j);
          d2 += d * d;
        }
        z[c] = -std::sqrt(d2);
      }
      break;
  }
  return z;
}

}  // namespace detail

inline std::vector<double> forward(const ModelState& m, std::span<const double> x) {
  const auto phi = embed(m, x);
  auto z = detail::head_logits(m, phi);
  for (std::size_t c = 0; c < z.size(); ++c) z[c] = m.logit_scale[c] * z[c] + m.logit_offset[c];
  return z;
}

/// Accumulates d(loss)/d(params) into `grad` (same shape as the model) given
/// dL/dz' for one input. Only selected blocks are touched.
inline void backward(const ModelState& m, std::span<const double> x, std::span<const double> dlogits,
                     const ParamSelection& sel, ModelState& grad) {
  const std::size_t k = m.num_classes();
  std::vector<double> pre;
  std::vector<double> phi;
  if (m.encoder) {
    const auto& e = *m.encoder;
    pre.resize(e.weight.rows);
    phi.resize(e.weight.rows);
    for (std::size_t j = 0; j < pre.size(); ++j) {
      pre[j] = dot(e.weight.row(j), x) + e.bias[j];
      phi[j] = std::max(0.0, pre[j]);
    }
  } else {
    phi.assign(x.begin(), x.end());
  }
  const auto z = detail::head_logits(m, phi);

  std::vector<double> dz(k);
  for (std::size_t c = 0; c < k; ++c) {
    dz[c] = dlogits[c] * m.logit_scale[c];
    if (sel.logit_scale) grad.logit_scale[c] += dlogits[c] * z[c];
    if (sel.logit_offset) grad.logit_offset[c] += dlogits[c];
  }

  const bool need_dphi = sel.encoder && m.encoder.has_value();
  std::vector<double> dphi(need_dphi ? phi.size() : 0, 0.0);
  switch (m.classifier) {
    case ClassifierKind::linear:
      for (std::size_t c = 0; c < k; ++c) {
        if (dz[c] == 0.0) continue;
        if (sel.weight) {
          auto g = grad.weight.row(c);
          for (std::size_t j = 0; j < phi.size(); ++j) g[j] += dz[c] * phi[j];
        }
        if (sel.bias) grad.bias[c] += dz[c];
        if (need_dphi) {
          const auto w = m.weight.row(c);
          for (std::size_t j = 0; j < dphi.size(); ++j) dphi[j] += dz[c] * w[j];
        }
      }
      break;
    case ClassifierKind::cosine: {
      const double pn = std::max(l2_norm(phi), detail::kNormFloor);
      for (std::size_t c = 0; c < k; ++c) {
        const auto w = m.weight.row(c);
        const double wn = std::max(l2_norm(w), detail::kNormFloor);
        const double cosv = dot(w, phi) / (wn * pn);
        if (sel.temperature) grad.temperature += dz[c] * cosv;
        if (dz[c] == 0.0) continue;
        const double t = m.temperature * dz[c];
        if (sel.weight) {
          auto g = grad.weight.row(c);
          for (std::size_t j = 0; j < phi.size(); ++j) g[j] += t / wn * (phi[j] / pn - cosv * w[j] / wn);
        }
        if (need_dphi)
          for (std::size_t j = 0; j < dphi.size(); ++j) dphi[j] += t / pn * (w[j] / wn - cosv * phi[j] / pn);
      }
      break;
    }
    case ClassifierKind::nearest_mean:
      if (sel.weight || sel.encoder) throw Error("nearest_mean heads have no trainable parameters");
      break;
  }

  if (need_dphi) {
    auto& ge = *grad.encoder;
    for (std::size_t j = 0; j < dphi.size(); ++j) {
      if (pre[j] <= 0.0) continue;
      auto g = ge.weight.row(j);
      for (std::size_t i = 0; i < x.size(); ++i) g[i] += dphi[j] * x[i];
      ge.bias[j] += dphi[j];
    }
  }
}

/// A model-shaped container of zeros.
inline ModelState zeros_like(const ModelState& m) {
  ModelState z = m;
  if (z.encoder) {
    std::fill(z.encoder->weight.data.begin(), z.encoder->weight.data.end(), 0.0);
    std::fill(z.encoder->bias.begin(), z.encoder->bias.end(), 0.0);
  }
  std::fill(z.weight.data.begin(), z.weight.data.end(), 0.0);
  std::fill(z.bias.begin(), z.bias.end(), 0.0);
  z.temperature = 0.0;
  std::fill(z.logit_scale.begin(), z.logit_scale.end(), 0.0);
  std::fill(z.logit_offset.begin(), z.logit_offset.end(), 0.0);
  return z;
}

namespace detail {

template <typename Model, typename Fn>
void visit_selected(Model& m, const ParamSelection& sel, Fn&& fn) {
  const auto block = [&](auto& v) {
    for (auto& x : v) fn(x);
  };
  if (sel.encoder && m.encoder) {
    block(m.encoder->weight.data);
    block(m.encoder->bias);
  }
  if (sel.weight) block(m.weight.data);
  if (sel.bias) block(m.bias);
  if (sel.temperature) fn(m.temperature);
  if (sel.logit_scale) block(m.logit_scale);
  if (sel.logit_offset) block(m.logit_offset);
}

}  // namespace detail

/// Selected parameters packed into one vector (encoder, weight, bias,
/// temperature, scale, offset order).
inline std::vector<double> flatten(const ModelState& m, const ParamSelection& sel) {
  std::vector<double> out;
  detail::visit_selected(m, sel, [&](const double& v) { out.push_back(v); });
  return out;
}

inline void unflatten(ModelState& m, const ParamSelection& sel, std::span<const double> flat) {
  std::size_t i = 0;
  detail::visit_selected(m, sel, [&](double& v) {
    if (i >= flat.size()) throw Error("parameter vector too short");
    v = flat[i++];
  });
  if (i != flat.size()) throw Error("parameter vector too long");
}

/// Per-class L2 norms of the classifier rows.
inline std::vector<double> weight_norms(const ModelState& m) {
  std::vector<double> n(m.num_classes());
  for (std::size_t c = 0; c < n.size(); ++c) n[c] = l2_norm(m.weight.row(c));
  return n;
}

/// Rescales each classifier row to w_c / ||w_c||^tau and zeroes the bias.
inline ModelState tau_normalize(const ModelState& m, double tau) {
  if (m.classifier != ClassifierKind::linear) throw Error("tau_normalize needs a linear classifier");
  ModelState out = m;
  for (std::size_t c = 0; c < m.num_classes(); ++c) {
    const double norm = l2_norm(m.weight.row(c));
    if (norm == 0.0 && tau > 0.0) throw Error("tau_normalize: class " + std::to_string(c) + " has a zero weight row");
    const double div = std::pow(norm, tau);
    for (auto& w : out.weight.row(c)) w /= div;
  }
  std::fill(out.bias.begin(), out.bias.end(), 0.0);
  return out;
}

}  // namespace ltlab
