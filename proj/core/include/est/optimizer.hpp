// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "est/model.hpp"

EST_NAMESPACE_BEGIN

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

// One AdamW update of a single tensor with bias correction and decoupled
// weight decay:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
// `step` is the 1-based update count of this tensor.
void adamw_update(std::span<Real> param, std::span<const Real> grad, std::span<Real> m, std::span<Real> v,
                  std::int64_t step, double lr, const AdamWConfig& config, bool apply_decay);

// AdamW over a model's parameters. Weight decay applies to matrices only,
// never to LayerNorm parameters or embeddings. A tensor that received no
// gradient buffer this step is left untouched, moments and step count
// included; a tensor with a buffer is updated even where entries are zero.
class AdamW {
 public:
  struct Slot {
    std::vector<Real> m;
    std::vector<Real> v;
    std::int64_t steps = 0;
  };

  AdamW() = default;
  AdamW(const AdamWConfig& config, ModelParams& params);

  // Throws NumericalError naming the tensor if any gradient is non-finite;
  // parameters are untouched in that case.
  void step(ModelParams& params, double lr);

  const AdamWConfig& config() const { return config_; }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }

 private:
  AdamWConfig config_;
  std::vector<Slot> slots_;
};

// Global L2 norm of all present gradients; scales them down to max_norm when
// larger. Returns the norm before clipping.
double clip_grad_norm(ModelParams& params, double max_norm);

enum class LrDecay { kLinear, kCosine };

std::string to_string(LrDecay decay);
LrDecay parse_lr_decay(std::string_view text);

// Linear warmup to peak_lr over warmup_steps, then linear or cosine decay that
// reaches min_lr at total_steps.
struct LrSchedule {
  double peak_lr = 1e-3;
  double min_lr = 1e-4;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  LrDecay decay = LrDecay::kCosine;

  double at(std::int64_t step) const;
};

EST_NAMESPACE_END
