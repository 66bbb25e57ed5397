// AdamW with decoupled weight decay and a linear warm-up / linear decay
// learning-rate schedule.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgca/params.hpp"
#include "pgca/tensor.hpp"

namespace pgca {

struct TrainHyper {
  double lr_max = 2e-3;
  std::size_t warmup_steps = 200;
  std::size_t total_steps = 2000;
  std::size_t batch_size = 8;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::size_t eval_every = 200;
  std::uint64_t seed = 1;
  int stage = 1;

  bool operator==(const TrainHyper&) const = default;

  void validate() const {
    if (!(lr_max > 0.0)) throw std::invalid_argument("train: lr_max must be positive");
    if (warmup_steps > total_steps) throw std::invalid_argument("train: warmup_steps exceeds total_steps");
    if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("train: weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("train: Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw std::invalid_argument("train: adam_eps must be positive");
    if (stage != 1 && stage != 2) throw std::invalid_argument("train: stage must be 1 or 2");
  }
};

/// Desk-scale stage-1 budget: full fine-tune.
inline TrainHyper stage1_defaults() {
  TrainHyper h;
  h.lr_max = 2e-3;
  h.warmup_steps = 200;
  h.total_steps = 2000;
  h.batch_size = 8;
  h.stage = 1;
  return h;
}

/// Desk-scale stage-2 budget: fusion layers only.
inline TrainHyper stage2_defaults() {
  TrainHyper h;
  h.lr_max = 1e-2;
  h.warmup_steps = 300;
  h.total_steps = 3000;
  h.batch_size = 8;
  h.stage = 2;
  return h;
}

/// Full-scale budgets for a large pretrained backbone; presets only.
inline TrainHyper full_scale_stage1() {
  TrainHyper h;
  h.lr_max = 1.25e-5;
  h.warmup_steps = 8000;
  h.total_steps = 80000;
  h.batch_size = 4;
  h.stage = 1;
  return h;
}

inline TrainHyper full_scale_stage2() {
  TrainHyper h;
  h.lr_max = 5.0e-5;
  h.warmup_steps = 30000;
  h.total_steps = 180000;
  h.batch_size = 8;
  h.stage = 2;
  return h;
}

/// Linear ramp from 0 to lr_max over the warm-up, then linear decay to 0 at
/// total_steps.
inline double lr_schedule(std::size_t step, const TrainHyper& hp) {
  if (step < hp.warmup_steps) {
    return hp.lr_max * static_cast<double>(step) / static_cast<double>(hp.warmup_steps);
  }
  if (step == hp.warmup_steps) return hp.lr_max;
  if (step >= hp.total_steps) return 0.0;
  const double remaining = static_cast<double>(hp.total_steps - step);
  return hp.lr_max * remaining / static_cast<double>(hp.total_steps - hp.warmup_steps);
}

struct Moments {
  std::vector<double> m;
  std::vector<double> v;
  bool operator==(const Moments&) const = default;
};

struct OptState {
  std::uint64_t step = 0;
  std::map<std::string, Moments> moments;
  bool operator==(const OptState&) const = default;
};

/// One AdamW update of a single parameter. `t` is the 1-based step count used
/// for bias correction.
inline void adamw_update(std::span<double> param, std::span<const double> grad, Moments& mom, std::uint64_t t,
                         double lr, const TrainHyper& hp) {
  if (param.size() != grad.size()) throw ShapeError("adamw: parameter and gradient sizes differ");
  if (mom.m.empty()) {
    mom.m.assign(param.size(), 0.0);
    mom.v.assign(param.size(), 0.0);
  }
  if (mom.m.size() != param.size()) throw ShapeError("adamw: moment size does not match parameter");
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(t));
  const double decay = 1.0 - lr * hp.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    mom.m[i] = hp.beta1 * mom.m[i] + (1.0 - hp.beta1) * g;
    mom.v[i] = hp.beta2 * mom.v[i] + (1.0 - hp.beta2) * g * g;
    const double mhat = mom.m[i] / bc1;
    const double vhat = mom.v[i] / bc2;
    param[i] *= decay;
    param[i] -= lr * mhat / (std::sqrt(vhat) + hp.adam_eps);
  }
}

/// Scales the gradients of `names` so their joint L2 norm is at most
/// max_norm. Returns the norm before clipping.
inline double clip_grad_norm(ParamStore& store, const std::vector<std::string>& names, double max_norm) {
  double sq = 0.0;
  for (const auto& n : names) {
    const Tensor& t = store.get(n);
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (const auto& n : names) {
      Tensor& t = store.get(n);
      if (!t.has_grad()) continue;
      auto& g = t.node()->grad;
      for (double& x : g) x *= s;
    }
  }
  return norm;
}

/// Updates every parameter in `trainable` from its accumulated gradient.
/// Parameters outside `trainable` are never touched. A non-finite gradient
/// aborts the step before anything is modified.
inline void adamw_step(ParamStore& store, const std::vector<std::string>& trainable, OptState& state, double lr,
                       const TrainHyper& hp) {
  for (const auto& n : trainable) {
    const Tensor& t = store.get(n);
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NumericError("adamw: non-finite gradient in '" + n + "'");
    }
  }
  ++state.step;
  for (const auto& n : trainable) {
    Tensor& t = store.get(n);
    std::vector<double> zeros;
    std::span<const double> g = t.grad();
    if (!t.has_grad()) {
      zeros.assign(t.size(), 0.0);
      g = zeros;
    }
    adamw_update(t.mutable_data(), g, state.moments[n], state.step, lr, hp);
  }
}

}  // namespace pgca
