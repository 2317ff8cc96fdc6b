// SPDX-License-Identifier: Apache-2.0
#include "est/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "est/errors.hpp"
#include "est/random.hpp"

EST_NAMESPACE_BEGIN

std::size_t round_to_count(double p, std::size_t n) {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("sampling rate " + std::to_string(p) + " is outside (0, 1]");
  if (n == 0) throw ConfigError("round_to_count: n must be positive");
  // The small offset keeps products such as 0.35 * 10 = 3.4999999999999996
  // on the intended side of the half.
  const double scaled = p * static_cast<double>(n);
  const auto k = static_cast<std::size_t>(std::floor(scaled + 0.5 + 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

std::vector<std::size_t> sample_subset(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  if (k < 1 || k > n) {
    throw std::logic_error("sample_subset: need 1 <= k <= n, got k=" + std::to_string(k) + ", n=" + std::to_string(n));
  }
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  if (k == n) return pool;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

SubnetworkMask sample_mask(const ModelConfig& config, const Rates& rates, std::mt19937_64& rng) {
  const std::size_t n_layers = round_to_count(rates.layer, config.n_layers);
  const std::size_t n_heads = round_to_count(rates.head, config.n_heads);
  const std::size_t n_cols = round_to_count(rates.mlp, config.mlp_inner);
  SubnetworkMask mask;
  mask.rates = rates;
  mask.layers = sample_subset(config.n_layers, n_layers, rng);
  mask.selections.reserve(mask.layers.size());
  for (std::size_t i = 0; i < mask.layers.size(); ++i) {
    LayerSelection sel;
    sel.heads = sample_subset(config.n_heads, n_heads, rng);
    sel.mlp_cols = sample_subset(config.mlp_inner, n_cols, rng);
    mask.selections.push_back(std::move(sel));
  }
  return mask;
}

SubnetworkMask mask_for_step(const SamplingScheduler& scheduler, const ModelConfig& config, SamplerSeed seed,
                             std::int64_t step) {
  const Rates& rates = scheduler.rates_at(step);
  auto rng = keyed_rng(seed.seed, seed.stream_id, static_cast<std::uint64_t>(step));
  return sample_mask(config, rates, rng);
}

MaskQueue::MaskQueue(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ConfigError("mask.queue_capacity must be >= 1");
}

bool MaskQueue::push(SubnetworkMask mask) {
  std::unique_lock lock(mutex_);
  not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
  if (closed_) return false;
  items_.push_back(std::move(mask));
  not_empty_.notify_one();
  return true;
}

SubnetworkMask MaskQueue::pop() {
  std::unique_lock lock(mutex_);
  not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
  if (!items_.empty()) {
    SubnetworkMask m = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return m;
  }
  if (error_) std::rethrow_exception(error_);
  throw StreamTerminated("mask stream terminated");
}

void MaskQueue::close() {
  std::lock_guard lock(mutex_);
  closed_ = true;
  not_empty_.notify_all();
  not_full_.notify_all();
}

void MaskQueue::fail(std::exception_ptr error) {
  std::lock_guard lock(mutex_);
  error_ = std::move(error);
  closed_ = true;
  not_empty_.notify_all();
  not_full_.notify_all();
}

MaskStream::MaskStream(const SamplingScheduler& scheduler, const ModelConfig& config, SamplerSeed seed,
                       std::int64_t first_step, std::size_t capacity)
    : MaskStream(
          [scheduler, config, seed](std::int64_t step) { return mask_for_step(scheduler, config, seed, step); },
          first_step, scheduler.total_steps(), capacity) {
  config.validate();
}

MaskStream::MaskStream(Generator generator, std::int64_t first_step, std::int64_t last_step, std::size_t capacity)
    : generator_(std::move(generator)),
      first_step_(first_step),
      last_step_(last_step),
      next_step_(first_step),
      queue_(capacity) {
  if (first_step_ < 1) throw RangeError("mask stream must start at step >= 1");
  worker_ = std::jthread([this](std::stop_token stop) { produce(stop); });
}

MaskStream::~MaskStream() {
  worker_.request_stop();
  queue_.close();
}

void MaskStream::produce(std::stop_token stop) {
  try {
    for (std::int64_t step = first_step_; step <= last_step_; ++step) {
      if (stop.stop_requested()) return;
      if (!queue_.push(generator_(step))) return;
    }
    queue_.close();
  } catch (...) {
    queue_.fail(std::current_exception());
  }
}

SubnetworkMask MaskStream::next() {
  SubnetworkMask m;
  try {
    m = queue_.pop();
  } catch (const StreamTerminated&) {
    throw;
  } catch (const std::exception& e) {
    throw StreamTerminated(std::string("mask producer failed: ") + e.what());
  }
  ++next_step_;
  return m;
}

EST_NAMESPACE_END
