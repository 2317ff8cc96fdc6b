// SPDX-License-Identifier: Apache-2.0
#include "est/scheduler.hpp"

#include <algorithm>
#include <cmath>

#include "est/errors.hpp"

EST_NAMESPACE_BEGIN

namespace {

void check_rate(double r, const std::string& path) {
  if (!(r > 0.0 && r <= 1.0)) throw ConfigError(path + " = " + std::to_string(r) + " is outside (0, 1]");
}

struct PresetDef {
  std::string_view name;
  std::vector<Stage> stages;
};

const std::vector<PresetDef>& presets() {
  constexpr Rates half_all{0.5, 0.5, 0.5};
  constexpr Rates half_width{0.5, 0.5, 1.0};
  constexpr Rates half_depth{1.0, 1.0, 0.5};
  constexpr Rates full{1.0, 1.0, 1.0};
  static const std::vector<PresetDef> table = {
      {"practical-gpt2", {{20000, half_all}, {70000, half_width}, {150000, full}}},
      {"practical-tinyllama", {{10000, half_all}, {25000, half_width}, {60000, full}}},
      {"one-stage", {{150000, half_width}}},
      {"two-stage-a", {{50000, half_width}, {150000, full}}},
      {"two-stage-b", {{70000, half_width}, {150000, full}}},
      {"two-stage-c", {{90000, half_width}, {150000, full}}},
      {"three-stage-alt", {{20000, half_all}, {70000, half_depth}, {150000, full}}},
      // Three equal stages with all rates 0.5 in the first two.
      {"equal-thirds", {{50000, half_all}, {100000, half_width}, {150000, full}}},
      {"full", {{150000, full}}},
  };
  return table;
}

}  // namespace

std::vector<std::string> validate_stages(std::span<const Stage> stages, std::int64_t total_steps) {
  if (stages.empty()) throw ConfigError("scheduler.stages must contain at least one stage");
  std::int64_t prev = 0;
  for (std::size_t t = 0; t < stages.size(); ++t) {
    const std::string path = "scheduler.stages[" + std::to_string(t) + "]";
    if (stages[t].end_step <= prev) {
      throw ConfigError(path + ".end_step = " + std::to_string(stages[t].end_step) +
                        " must be greater than the previous end step " + std::to_string(prev));
    }
    prev = stages[t].end_step;
    check_rate(stages[t].rates.head, path + ".rates.head");
    check_rate(stages[t].rates.mlp, path + ".rates.mlp");
    check_rate(stages[t].rates.layer, path + ".rates.layer");
  }
  if (prev != total_steps) {
    throw ConfigError("scheduler.stages[" + std::to_string(stages.size() - 1) + "].end_step = " +
                      std::to_string(prev) + " must equal the total training steps " + std::to_string(total_steps));
  }
  std::vector<std::string> warnings;
  if (!stages.back().rates.full()) {
    warnings.push_back("final stage rates " + to_string(stages.back().rates) +
                       " are not (1,1,1); the complete model is never trained on its own");
  }
  return warnings;
}

SamplingScheduler::SamplingScheduler(std::vector<Stage> stages) : stages_(std::move(stages)) {
  warnings_ = validate_stages(stages_, stages_.empty() ? 0 : stages_.back().end_step);
}

SamplingScheduler SamplingScheduler::preset(std::string_view name, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("scheduler.scale must be positive");
  for (const auto& def : presets()) {
    if (def.name != name) continue;
    std::vector<Stage> stages = def.stages;
    std::int64_t prev = 0;
    for (auto& s : stages) {
      const auto scaled = static_cast<std::int64_t>(std::llround(scale * static_cast<double>(s.end_step)));
      s.end_step = std::max(scaled, prev + 1);
      prev = s.end_step;
    }
    return SamplingScheduler(std::move(stages));
  }
  std::string known;
  for (const auto& def : presets()) known += (known.empty() ? "" : ", ") + std::string(def.name);
  throw ConfigError("unknown scheduler preset '" + std::string(name) + "' (known: " + known + ")");
}

std::vector<std::string> SamplingScheduler::preset_names() {
  std::vector<std::string> out;
  for (const auto& def : presets()) out.emplace_back(def.name);
  return out;
}

std::size_t SamplingScheduler::stage_index(std::int64_t step) const {
  if (step < 1 || step > total_steps()) {
    throw RangeError("step " + std::to_string(step) + " outside [1, " + std::to_string(total_steps()) + "]");
  }
  auto it = std::lower_bound(stages_.begin(), stages_.end(), step,
                             [](const Stage& s, std::int64_t v) { return s.end_step < v; });
  return static_cast<std::size_t>(it - stages_.begin());
}

const Rates& SamplingScheduler::rates_at(std::int64_t step) const { return stages_[stage_index(step)].rates; }

EST_NAMESPACE_END
