// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "est/rates.hpp"

EST_NAMESPACE_BEGIN

// A stage covers the steps (previous end_step, end_step].
struct Stage {
  std::int64_t end_step = 0;
  Rates rates;
  friend bool operator==(const Stage&, const Stage&) = default;
};

// Checks the hard invariants (non-empty, strictly increasing end steps, last
// end step equal to total_steps, every rate in (0, 1]) and throws ConfigError
// with a field path such as "scheduler.stages[1].end_step" on violation.
// Returns soft warnings, e.g. a final stage that is not the complete model.
std::vector<std::string> validate_stages(std::span<const Stage> stages, std::int64_t total_steps);

// Staged sampling-rate plan: maps a training step to the rates of its stage.
class SamplingScheduler {
 public:
  SamplingScheduler() = default;
  // Validates against the last end step.
  explicit SamplingScheduler(std::vector<Stage> stages);

  // Named presets; `scale` multiplies every end step (rounded to nearest,
  // bumped where needed to stay strictly increasing). Names:
  // practical-gpt2, practical-tinyllama, one-stage, two-stage-a, two-stage-b,
  // two-stage-c, three-stage-alt, equal-thirds, full.
  static SamplingScheduler preset(std::string_view name, double scale = 1.0);
  static std::vector<std::string> preset_names();

  // Rates for 1 <= step <= total_steps(); RangeError otherwise.
  const Rates& rates_at(std::int64_t step) const;
  // 0-based index of the stage containing `step`.
  std::size_t stage_index(std::int64_t step) const;
  // First step of stage `t` (1-based step numbering).
  std::int64_t stage_begin(std::size_t t) const { return t == 0 ? 1 : stages_[t - 1].end_step + 1; }

  std::int64_t total_steps() const { return stages_.empty() ? 0 : stages_.back().end_step; }
  std::span<const Stage> stages() const { return stages_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  friend bool operator==(const SamplingScheduler& a, const SamplingScheduler& b) { return a.stages_ == b.stages_; }

 private:
  std::vector<Stage> stages_;
  std::vector<std::string> warnings_;
};

EST_NAMESPACE_END
