// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "est/corpus.hpp"
#include "est/loss_log.hpp"
#include "est/model.hpp"
#include "est/scheduler.hpp"

EST_NAMESPACE_BEGIN

struct HessianTraceEstimate {
  double value = 0;
  std::size_t n_probes = 0;
  double std_error = 0;    // sample std / sqrt(n); 0 for a single probe
  double fd_epsilon = 0;   // finite-difference step actually used
  std::vector<double> probes;  // v^T H v per probe
};

// Gradient of a deterministic loss at the given flat parameter vector.
using GradientFn = std::function<std::vector<double>(std::span<const double> theta)>;

struct HutchinsonOptions {
  std::size_t n_probes = 64;
  double fd_epsilon = 1e-3;
  // Multiply fd_epsilon by max(1, |theta| / sqrt(n)).
  bool scale_by_norm = true;
  std::uint64_t seed = 0x5eed;
  std::uint64_t stream = 0x4e55;
};

// Hutchinson trace estimate with Rademacher probes. Each H v comes from a
// central difference of gradients, (g(theta + h v) - g(theta - h v)) / 2h.
// Probe k draws from a generator keyed by (seed, stream, k), so the result
// does not depend on evaluation order. NumericalError on non-finite gradients.
HessianTraceEstimate hessian_trace(std::span<const double> theta, const GradientFn& gradient,
                                   const HutchinsonOptions& options = {});

// Mean full-model gradient over fixed batches. The returned function
// assigns theta into `params` for each call and restores the original values
// before returning; `params` must outlive it.
GradientFn model_gradient_fn(ModelParams& params, std::vector<Batch> batches);

struct TransitionReport {
  std::int64_t step = 0;  // last step of the earlier stage
  double pre_mean = 0;    // mean loss over (step - window, step]
  double post_mean = 0;   // mean loss over (step, step + window]
  double drop = 0;        // pre_mean - post_mean
  std::int64_t window = 0;
};

// One report per internal stage boundary. ConfigError when a window would
// reach into another stage, RangeError when the log lacks a required step.
std::vector<TransitionReport> transition_drop(const LossLog& log, const SamplingScheduler& scheduler,
                                              std::int64_t window);

// Same, with boundaries taken from the log's stage column.
std::vector<TransitionReport> transition_drop(const LossLog& log, std::int64_t window);

struct SlopeReport {
  std::int64_t crossing_step = 0;  // first step whose smoothed loss <= level
  double slope = 0;                // least-squares d loss / d step around it
  std::size_t points = 0;
};

struct SlopeOptions {
  std::size_t smoothing = 50;  // trailing-mean width, in records
  std::int64_t window = 200;   // steps, centered on the crossing
};

// Slope of each log where its smoothed loss first reaches `level`.
// RangeError if a log never reaches it.
SlopeReport loss_slope(const LossLog& log, double level, const SlopeOptions& options = {});

std::pair<SlopeReport, SlopeReport> slope_compare(const LossLog& a, const LossLog& b, double level,
                                                  const SlopeOptions& options = {});

EST_NAMESPACE_END
