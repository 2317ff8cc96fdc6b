// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "est/model.hpp"
#include "est/optimizer.hpp"
#include "est/random.hpp"
#include "est/sampler.hpp"
#include "est/scheduler.hpp"

EST_NAMESPACE_BEGIN

// Flat "key = value" text with '#' comments, as used by run configs, manifests
// and summaries. Duplicate keys are errors.
struct KeyValueEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};
std::vector<KeyValueEntry> parse_key_values(std::string_view text, std::string_view origin);
std::string format_key_values(const std::vector<std::pair<std::string, std::string>>& entries);

// Shortest round-trip text for a double.
std::string format_double(double v);

struct SeedConfig {
  std::uint64_t seed = 1234;
  std::uint64_t sampler_stream = 1;
  std::uint64_t data_stream = 2;
  std::string algorithm = kRngAlgorithm;
};

struct DataConfig {
  std::string train_path;
  std::string eval_path;           // empty: hold out the tail of the training corpus
  double holdout_fraction = 0.05;  // used only when eval_path is empty
};

struct TrainConfig {
  ModelConfig model;
  SamplingScheduler scheduler = SamplingScheduler(std::vector<Stage>{Stage{1000, Rates{}}});
  std::int64_t steps = 1000;
  std::size_t batch_size = 8;
  AdamWConfig optimizer;
  double peak_lr = 1e-3;
  std::int64_t warmup_steps = 100;
  LrDecay decay = LrDecay::kCosine;
  double min_lr = 1e-4;
  double clip_norm = 1.0;
  bool sampling = true;  // false: always the full model, no mask stream
  SeedConfig seed;
  DataConfig data;
  std::int64_t checkpoint_interval = 0;  // 0: final checkpoint only
  std::int64_t eval_interval = 0;        // 0: final evaluation only
  std::size_t eval_batches = 8;
  double backward_multiplier = 2.0;
  std::size_t queue_capacity = 4;

  LrSchedule lr_schedule() const { return {peak_lr, min_lr, warmup_steps, steps, decay}; }
  SamplerSeed sampler_seed() const { return {seed.seed, seed.sampler_stream}; }
  SamplerSeed data_seed() const { return {seed.seed, seed.data_stream}; }
  // Throws ConfigError on violated invariants; returns soft warnings.
  std::vector<std::string> validate() const;
};

// Parses a run config. Unknown keys, malformed values and duplicate keys
// raise ConfigError prefixed with "origin:line:". Relative data paths are
// resolved against `base_dir` when it is non-empty.
TrainConfig parse_config(std::string_view text, std::string_view origin = "config",
                         const std::filesystem::path& base_dir = {});
TrainConfig load_config(const std::filesystem::path& path);

// Canonical text: every field, fixed order, scheduler spelled out as
// end_steps/rates. parse_config(serialize_config(c)) == c.
std::string serialize_config(const TrainConfig& config);
// FNV-1a 64 of the canonical text, as 16 hex digits.
std::string config_hash(const TrainConfig& config);

EST_NAMESPACE_END
