// SPDX-License-Identifier: Apache-2.0
#include "est/cost_model.hpp"

#include "est/errors.hpp"

EST_NAMESPACE_BEGIN

ModuleCosts module_costs(const ModelConfig& config, std::int64_t tokens_per_step, double backward_multiplier) {
  config.validate();
  if (tokens_per_step < 1) throw ConfigError("tokens_per_step must be positive");
  if (backward_multiplier < 0) throw ConfigError("cost.backward_multiplier must be non-negative");
  const double t = static_cast<double>(tokens_per_step);
  const double d = static_cast<double>(config.hidden);
  const double width = static_cast<double>(config.attention_width());
  const double n = static_cast<double>(config.seq_len);
  const double m = static_cast<double>(config.mlp_inner);
  const double factor = 1.0 + backward_multiplier;
  return {factor * (8.0 * t * d * width + 4.0 * t * n * width), factor * (4.0 * t * d * m)};
}

double stage_step_cost(const Rates& rates, const ModuleCosts& costs, std::size_t n_layers) {
  return static_cast<double>(n_layers) * rates.layer * (rates.head * costs.mha + rates.mlp * costs.mlp);
}

CostReport total_cost(const SamplingScheduler& scheduler, const ModuleCosts& costs, std::size_t n_layers) {
  CostReport report;
  std::int64_t prev = 0;
  for (const Stage& s : scheduler.stages()) {
    StageCost sc;
    sc.steps = s.end_step - prev;
    sc.step_cost = stage_step_cost(s.rates, costs, n_layers);
    sc.total = static_cast<double>(sc.steps) * sc.step_cost;
    sc.rates = s.rates;
    report.est_total += sc.total;
    report.stages.push_back(sc);
    prev = s.end_step;
  }
  report.baseline_total =
      static_cast<double>(scheduler.total_steps()) * static_cast<double>(n_layers) * (costs.mha + costs.mlp);
  report.savings_fraction = report.baseline_total > 0 ? 1.0 - report.est_total / report.baseline_total : 0.0;
  return report;
}

double measured_flops(const SubnetworkMask& mask, const ModelConfig& config, const ModuleCosts& costs) {
  double total = 0;
  const double n_heads = static_cast<double>(config.n_heads);
  const double n_cols = static_cast<double>(config.mlp_inner);
  for (const LayerSelection& sel : mask.selections) {
    // Multiply before dividing so integral fractions stay exact.
    total += costs.mha * static_cast<double>(sel.heads.size()) / n_heads +
             costs.mlp * static_cast<double>(sel.mlp_cols.size()) / n_cols;
  }
  return total;
}

EST_NAMESPACE_END
