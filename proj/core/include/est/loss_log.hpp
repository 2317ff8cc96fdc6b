// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "est/real.hpp"

EST_NAMESPACE_BEGIN

struct LossRecord {
  std::int64_t step = 0;
  std::size_t stage = 0;  // 1-based
  double loss = 0;        // nats
  double lr = 0;
  double cum_flops = 0;
  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

inline constexpr const char* kLossLogHeader = "step,stage,loss,lr,cum_flops";

// Append-only training log; steps strictly increase and cumulative FLOPs
// never decrease (StateError otherwise).
class LossLog {
 public:
  void append(const LossRecord& record);
  std::span<const LossRecord> records() const { return records_; }
  bool empty() const { return records_.empty(); }
  std::size_t size() const { return records_.size(); }
  const LossRecord& back() const { return records_.back(); }
  // Loss at `step`, or nullptr when the step is not logged.
  const LossRecord* find(std::int64_t step) const;

  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
  static LossLog read_csv(std::istream& in, std::string_view origin = "log");
  static LossLog read_csv(const std::filesystem::path& path);

  friend bool operator==(const LossLog&, const LossLog&) = default;

 private:
  std::vector<LossRecord> records_;
};

struct EvalRecord {
  std::int64_t step = 0;
  double loss = 0;
  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

void write_eval_csv(std::span<const EvalRecord> records, const std::filesystem::path& path);
std::vector<EvalRecord> read_eval_csv(const std::filesystem::path& path);

EST_NAMESPACE_END
