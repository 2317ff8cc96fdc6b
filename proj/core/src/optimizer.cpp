// SPDX-License-Identifier: Apache-2.0
#include "est/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "est/errors.hpp"

EST_NAMESPACE_BEGIN

void adamw_update(std::span<Real> param, std::span<const Real> grad, std::span<Real> m, std::span<Real> v,
                  std::int64_t step, double lr, const AdamWConfig& config, bool apply_decay) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw DimensionError("adamw_update: parameter, gradient and moment sizes differ");
  }
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  const double decay = apply_decay ? config.weight_decay : 0.0;
  const double shrink = 1.0 - lr * decay;
  const double step_size = lr / c1;
  const double inv_sqrt_c2 = 1.0 / std::sqrt(c2);
  Real* __restrict pp = param.data();
  Real* __restrict mp = m.data();
  Real* __restrict vp = v.data();
  const Real* __restrict gp = grad.data();
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = gp[i];
    const double mi = b1 * mp[i] + (1.0 - b1) * g;
    const double vi = b2 * vp[i] + (1.0 - b2) * g * g;
    mp[i] = static_cast<Real>(mi);
    vp[i] = static_cast<Real>(vi);
    pp[i] = static_cast<Real>(pp[i] * shrink - step_size * mi / (std::sqrt(vi) * inv_sqrt_c2 + config.eps));
  }
}

AdamW::AdamW(const AdamWConfig& config, ModelParams& params) : config_(config) {
  for (const auto& p : params.named()) {
    Slot s;
    s.m.assign(p.tensor->size(), Real(0));
    s.v.assign(p.tensor->size(), Real(0));
    slots_.push_back(std::move(s));
  }
}

void AdamW::step(ModelParams& params, double lr) {
  auto named = params.named();
  if (named.size() != slots_.size()) throw StateError("AdamW: parameter list changed since construction");
  for (const auto& p : named) {
    if (!p.tensor->has_grad()) continue;
    for (Real g : p.tensor->grad()) {
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in " + p.name + "; step aborted");
    }
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    Tensor& t = *named[i].tensor;
    if (!t.has_grad()) continue;
    Slot& s = slots_[i];
    ++s.steps;
    adamw_update(t.data(), t.grad(), s.m, s.v, s.steps, lr, config_, named[i].weight_decay);
  }
}

double clip_grad_norm(ModelParams& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params.named()) {
    if (!p.tensor->has_grad()) continue;
    for (Real g : p.tensor->grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  if (norm > max_norm) {
    const auto factor = static_cast<Real>(max_norm / norm);
    for (const auto& p : params.named()) {
      if (!p.tensor->has_grad()) continue;
      for (Real& g : p.tensor->grad()) g *= factor;
    }
  }
  return norm;
}

std::string to_string(LrDecay decay) { return decay == LrDecay::kLinear ? "linear" : "cosine"; }

LrDecay parse_lr_decay(std::string_view text) {
  if (text == "linear") return LrDecay::kLinear;
  if (text == "cosine") return LrDecay::kCosine;
  throw ConfigError("lr.decay must be 'linear' or 'cosine', got '" + std::string(text) + "'");
}

double LrSchedule::at(std::int64_t step) const {
  if (step < 1) throw RangeError("lr_at: step must be >= 1");
  if (warmup_steps > 0 && step <= warmup_steps) {
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const std::int64_t span = total_steps - warmup_steps;
  if (span <= 0) return min_lr;
  const double progress = std::clamp(static_cast<double>(step - warmup_steps) / static_cast<double>(span), 0.0, 1.0);
  if (decay == LrDecay::kLinear) return peak_lr + (min_lr - peak_lr) * progress;
  return min_lr + 0.5 * (peak_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

EST_NAMESPACE_END
