// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "est/model.hpp"
#include "est/scheduler.hpp"

EST_NAMESPACE_BEGIN

// Seed of one random stream. The stream id separates, e.g., subnetwork
// sampling from data shuffling under the same user seed.
struct SamplerSeed {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  friend bool operator==(const SamplerSeed&, const SamplerSeed&) = default;
};

// round-half-up(p * n) clamped to [1, n]. ConfigError unless 0 < p <= 1.
std::size_t round_to_count(double p, std::size_t n);

// Uniform k-subset of [0, n) in increasing order (partial Fisher-Yates).
std::vector<std::size_t> sample_subset(std::size_t n, std::size_t k, std::mt19937_64& rng);

// One layer set for the step, then fresh head and column sets for every
// sampled layer in increasing layer order.
SubnetworkMask sample_mask(const ModelConfig& config, const Rates& rates, std::mt19937_64& rng);

// The mask of `step` (1-based), drawn from a generator keyed by the step.
SubnetworkMask mask_for_step(const SamplingScheduler& scheduler, const ModelConfig& config, SamplerSeed seed,
                             std::int64_t step);

// Bounded single-producer / single-consumer FIFO.
class MaskQueue {
 public:
  explicit MaskQueue(std::size_t capacity);

  // Blocks while full. Returns false if the queue was closed.
  bool push(SubnetworkMask mask);
  // Blocks while empty and open. Rethrows a producer failure; throws
  // StreamTerminated once closed and drained.
  SubnetworkMask pop();
  void close();
  void fail(std::exception_ptr error);
  std::size_t capacity() const { return capacity_; }

 private:
  std::mutex mutex_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<SubnetworkMask> items_;
  std::size_t capacity_;
  bool closed_ = false;
  std::exception_ptr error_;
};

// Generates masks for steps first_step..scheduler.total_steps() on a
// background thread. The sequence is identical to calling mask_for_step()
// for each step, whatever the capacity or thread timing.
class MaskStream {
 public:
  using Generator = std::function<SubnetworkMask(std::int64_t step)>;

  MaskStream(const SamplingScheduler& scheduler, const ModelConfig& config, SamplerSeed seed,
             std::int64_t first_step = 1, std::size_t capacity = 4);
  // Runs an arbitrary per-step generator over [first_step, last_step].
  MaskStream(Generator generator, std::int64_t first_step, std::int64_t last_step, std::size_t capacity = 4);
  ~MaskStream();
  MaskStream(const MaskStream&) = delete;
  MaskStream& operator=(const MaskStream&) = delete;

  // Mask for the next step in order; StreamTerminated past the last step or
  // after a producer failure.
  SubnetworkMask next();
  std::int64_t next_step() const { return next_step_; }

 private:
  void produce(std::stop_token stop);

  Generator generator_;
  std::int64_t first_step_;
  std::int64_t last_step_;
  std::int64_t next_step_;
  MaskQueue queue_;
  std::jthread worker_;
};

EST_NAMESPACE_END
