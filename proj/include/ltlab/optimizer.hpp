#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ltlab/common.hpp"

namespace ltlab {

enum class OptimizerKind { sgd, adam };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::sgd;
  /// Wrap the base optimizer in a sharpness-aware two-pass step.
  bool sam = false;
  /// Defaults to 0.01 for sgd and 3e-4 for adam.
  std::optional<double> lr;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double sam_rho = 0.05;

  double learning_rate() const { return lr.value_or(kind == OptimizerKind::sgd ? 0.01 : 3e-4); }

  bool operator==(const OptimizerSpec&) const = default;

  void validate() const {
    if (!(learning_rate() > 0.0)) throw ConfigError("optimizer lr must be > 0");
    if (!(sam_rho >= 0.0)) throw ConfigError("sam rho must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("adam eps must be > 0");
  }
};

/// Returns the objective at `params` and writes its gradient into `grad`.
using GradientFn = std::function<double(std::span<const double> params, std::vector<double>& grad)>;

/// Optimizer state over a flat parameter vector.
class Optimizer {
 public:
  Optimizer(OptimizerSpec spec, std::size_t num_params) : spec_(spec), lr_(spec.learning_rate()) {
    spec_.validate();
    if (spec_.kind == OptimizerKind::sgd) {
      momentum_buf_.assign(num_params, 0.0);
    } else {
      m_.assign(num_params, 0.0);
      v_.assign(num_params, 0.0);
    }
  }

  const OptimizerSpec& spec() const { return spec_; }

  /// One update of the base optimizer with a given gradient.
  void apply(std::vector<double>& params, std::span<const double> grads) {
    if (grads.size() != params.size()) throw Error("optimizer: gradient/parameter size mismatch");
    if (!all_finite(grads)) throw Error("optimizer: non-finite gradient");
    if (spec_.kind == OptimizerKind::sgd) {
      if (momentum_buf_.size() != params.size()) throw Error("optimizer: state size mismatch");
      for (std::size_t i = 0; i < params.size(); ++i) {
        momentum_buf_[i] = spec_.momentum * momentum_buf_[i] + grads[i];
        params[i] -= lr_ * momentum_buf_[i];
      }
      return;
    }
    if (m_.size() != params.size()) throw Error("optimizer: state size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = spec_.beta1 * m_[i] + (1.0 - spec_.beta1) * grads[i];
      v_[i] = spec_.beta2 * v_[i] + (1.0 - spec_.beta2) * grads[i] * grads[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + spec_.eps);
    }
  }

  /// Full training step. Plain optimizers evaluate the gradient once; SAM
  /// evaluates it again at params + rho * g / ||g|| on the same objective and
  /// applies that second gradient from the original params. Returns the
  /// objective at the unperturbed params.
  double step(std::vector<double>& params, const GradientFn& objective) {
    std::vector<double> grad(params.size(), 0.0);
    const double value = objective(params, grad);
    if (!std::isfinite(value)) throw Error("optimizer: non-finite objective");
    if (!all_finite(grad)) throw Error("optimizer: non-finite gradient");
    if (!spec_.sam) {
      apply(params, grad);
      return value;
    }
    const double scale = spec_.sam_rho / (l2_norm(grad) + 1e-12);
    std::vector<double> perturbed = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double e = scale * grad[i];
      if (e != 0.0) perturbed[i] += e;
    }
    std::vector<double> sharp_grad(params.size(), 0.0);
    const double sharp_value = objective(perturbed, sharp_grad);
    if (!std::isfinite(sharp_value)) throw Error("optimizer: non-finite objective at SAM perturbation");
    apply(params, sharp_grad);
    return value;
  }

 private:
  OptimizerSpec spec_;
  double lr_;
  std::vector<double> momentum_buf_;
  std::vector<double> m_;
  std::vector<double> v_;
  long long t_ = 0;
};

}  // namespace ltlab
