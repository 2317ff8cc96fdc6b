// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "est/model.hpp"
#include "est/scheduler.hpp"

EST_NAMESPACE_BEGIN

// Training FLOPs of one MHA module and one MLP module per layer per step.
// Embeddings, LayerNorm and the LM head are not counted.
struct ModuleCosts {
  double mha = 0;
  double mlp = 0;
};

struct StageCost {
  std::int64_t steps = 0;   // r_t
  double step_cost = 0;     // C_t
  double total = 0;         // r_t * C_t
  Rates rates;
};

struct CostReport {
  std::vector<StageCost> stages;
  double est_total = 0;
  double baseline_total = 0;
  double savings_fraction = 0;  // 1 - est_total / baseline_total
};

// Forward FLOPs are counted as 2 per multiply-add; training multiplies them
// by (1 + backward_multiplier):
//   mha = (1+b) * (8*T*d*N_H*d_k + 4*T*N*N_H*d_k)
//   mlp = (1+b) * (4*T*d*N_M)
// where T is tokens per step and N the sequence length.
ModuleCosts module_costs(const ModelConfig& config, std::int64_t tokens_per_step, double backward_multiplier = 2.0);

// N_L * p_L * (p_H * C_H + p_M * C_M)
double stage_step_cost(const Rates& rates, const ModuleCosts& costs, std::size_t n_layers);

CostReport total_cost(const SamplingScheduler& scheduler, const ModuleCosts& costs, std::size_t n_layers);

// Cost of the subnetwork actually sampled:
//   sum over sampled layers of (|I_H|/N_H * C_H + |I_M|/N_M * C_M).
double measured_flops(const SubnetworkMask& mask, const ModelConfig& config, const ModuleCosts& costs);

EST_NAMESPACE_END
