// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "est/config.hpp"
#include "est/loss_log.hpp"
#include "est/model.hpp"
#include "est/optimizer.hpp"

EST_NAMESPACE_BEGIN

// Position of a counter-keyed random stream: the next step to draw for.
struct StreamState {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  std::int64_t next_step = 1;
  friend bool operator==(const StreamState&, const StreamState&) = default;
};

// Everything needed to continue a run bit-for-bit.
struct Checkpoint {
  TrainConfig config;
  std::int64_t step = 0;  // last completed step
  StreamState sampler;
  StreamState data;
  ModelParams params;
  std::vector<AdamW::Slot> optimizer;
  LossLog log;
  std::vector<EvalRecord> evals;
};

// Directory layout:
//   manifest       key = value (format, precision, config hash, step, stream states)
//   config         canonical run config
//   params.bin     little-endian floats, parameters in declaration order
//   optimizer.bin  per tensor: u64 LE step count, then m and v as LE floats
//   loss_log.csv, eval_log.csv
void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir);

// Accepts fp32 or fp64 payloads regardless of the engine precision. IoError
// on missing/corrupt files or a config hash mismatch.
Checkpoint read_checkpoint(const std::filesystem::path& dir);

EST_NAMESPACE_END
