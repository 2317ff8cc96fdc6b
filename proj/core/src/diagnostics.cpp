// SPDX-License-Identifier: Apache-2.0
#include "est/diagnostics.hpp"

#include <cmath>
#include <numeric>

#include "est/errors.hpp"
#include "est/random.hpp"

EST_NAMESPACE_BEGIN

namespace {

void check_finite(const std::vector<double>& g, const char* where) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) {
      throw NumericalError(std::string("non-finite gradient entry ") + std::to_string(i) + " at " + where);
    }
  }
}

double mean_over(const LossLog& log, std::int64_t first, std::int64_t last) {
  double sum = 0;
  for (std::int64_t s = first; s <= last; ++s) {
    const LossRecord* r = log.find(s);
    if (!r) throw RangeError("loss log has no entry for step " + std::to_string(s));
    sum += r->loss;
  }
  return sum / static_cast<double>(last - first + 1);
}

// bounds[t] = last step of stage t.
std::vector<TransitionReport> drops(const LossLog& log, const std::vector<std::int64_t>& bounds, std::int64_t window) {
  if (window < 1) throw ConfigError("window must be at least 1 step");
  std::vector<TransitionReport> out;
  for (std::size_t t = 0; t + 1 < bounds.size(); ++t) {
    const std::int64_t s = bounds[t];
    const std::int64_t stage_first = t == 0 ? 1 : bounds[t - 1] + 1;
    if (s - window + 1 < stage_first || s + window > bounds[t + 1]) {
      throw ConfigError("window " + std::to_string(window) + " at transition " + std::to_string(s) +
                        " straddles another stage boundary");
    }
    TransitionReport r;
    r.step = s;
    r.window = window;
    r.pre_mean = mean_over(log, s - window + 1, s);
    r.post_mean = mean_over(log, s + 1, s + window);
    r.drop = r.pre_mean - r.post_mean;
    out.push_back(r);
  }
  return out;
}

}  // namespace

HessianTraceEstimate hessian_trace(std::span<const double> theta, const GradientFn& gradient,
                                   const HutchinsonOptions& options) {
  if (options.n_probes < 1) throw ConfigError("n_probes must be at least 1");
  if (!(options.fd_epsilon > 0)) throw ConfigError("fd_epsilon must be positive");
  if (theta.empty()) throw DimensionError("empty parameter vector");
  const std::size_t n = theta.size();

  double h = options.fd_epsilon;
  if (options.scale_by_norm) {
    const double norm = std::sqrt(std::inner_product(theta.begin(), theta.end(), theta.begin(), 0.0));
    h *= std::max(1.0, norm / std::sqrt(static_cast<double>(n)));
  }

  HessianTraceEstimate est;
  est.n_probes = options.n_probes;
  est.fd_epsilon = h;
  std::vector<double> v(n), plus(n), minus(n);
  for (std::size_t k = 0; k < options.n_probes; ++k) {
    auto rng = keyed_rng(options.seed, options.stream, k);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = (rng() >> 63) ? 1.0 : -1.0;
      plus[i] = theta[i] + h * v[i];
      minus[i] = theta[i] - h * v[i];
    }
    const auto gp = gradient(plus);
    const auto gm = gradient(minus);
    if (gp.size() != n || gm.size() != n) throw DimensionError("gradient size does not match parameters");
    check_finite(gp, "theta + h v");
    check_finite(gm, "theta - h v");
    double q = 0;
    for (std::size_t i = 0; i < n; ++i) q += v[i] * (gp[i] - gm[i]);
    est.probes.push_back(q / (2 * h));
  }

  const double m = static_cast<double>(est.probes.size());
  est.value = std::accumulate(est.probes.begin(), est.probes.end(), 0.0) / m;
  if (est.probes.size() > 1) {
    double ss = 0;
    for (double q : est.probes) ss += (q - est.value) * (q - est.value);
    est.std_error = std::sqrt(ss / (m - 1)) / std::sqrt(m);
  }
  return est;
}

GradientFn model_gradient_fn(ModelParams& params, std::vector<Batch> batches) {
  if (batches.empty()) throw ConfigError("gradient needs at least one batch");
  return [&params, batches = std::move(batches)](std::span<const double> theta) {
    const std::vector<double> saved = params.flatten();
    params.assign(theta);
    for (auto& p : params.named()) p.tensor->zero_grad();
    const auto mask = SubnetworkMask::full(params.config);
    for (const auto& b : batches) {
      Tape tape;
      Var loss = model_loss(tape, params, b.inputs, b.targets, b.layout, mask);
      tape.backward(loss);
    }
    std::vector<double> g = params.flatten_grad();
    const double inv = 1.0 / static_cast<double>(batches.size());
    for (double& x : g) x *= inv;
    params.assign(saved);
    for (auto& p : params.named()) p.tensor->clear_grad();
    return g;
  };
}

std::vector<TransitionReport> transition_drop(const LossLog& log, const SamplingScheduler& scheduler,
                                              std::int64_t window) {
  std::vector<std::int64_t> bounds;
  for (const Stage& s : scheduler.stages()) bounds.push_back(s.end_step);
  return drops(log, bounds, window);
}

std::vector<TransitionReport> transition_drop(const LossLog& log, std::int64_t window) {
  std::vector<std::int64_t> bounds;
  const auto recs = log.records();
  for (std::size_t i = 0; i + 1 < recs.size(); ++i) {
    if (recs[i + 1].stage != recs[i].stage) bounds.push_back(recs[i].step);
  }
  if (!recs.empty()) bounds.push_back(recs.back().step);
  return drops(log, bounds, window);
}

SlopeReport loss_slope(const LossLog& log, double level, const SlopeOptions& options) {
  if (options.smoothing < 1) throw ConfigError("smoothing must be at least 1 record");
  if (options.window < 2) throw ConfigError("slope window must be at least 2 steps");
  const auto recs = log.records();
  double running = 0;
  std::size_t crossing = recs.size();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    running += recs[i].loss;
    if (i >= options.smoothing) running -= recs[i - options.smoothing].loss;
    const double width = static_cast<double>(std::min(i + 1, options.smoothing));
    if (running / width <= level) {
      crossing = i;
      break;
    }
  }
  if (crossing == recs.size()) throw RangeError("smoothed loss never reaches level " + std::to_string(level));

  SlopeReport r;
  r.crossing_step = recs[crossing].step;
  const std::int64_t lo = r.crossing_step - options.window / 2;
  const std::int64_t hi = lo + options.window;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& rec : recs) {
    if (rec.step < lo || rec.step > hi) continue;
    const double x = static_cast<double>(rec.step - r.crossing_step);
    sx += x;
    sy += rec.loss;
    sxx += x * x;
    sxy += x * rec.loss;
    ++r.points;
  }
  const double n = static_cast<double>(r.points);
  const double den = n * sxx - sx * sx;
  if (r.points < 2 || den == 0) throw RangeError("too few log points around the crossing to fit a slope");
  r.slope = (n * sxy - sx * sy) / den;
  return r;
}

std::pair<SlopeReport, SlopeReport> slope_compare(const LossLog& a, const LossLog& b, double level,
                                                  const SlopeOptions& options) {
  return {loss_slope(a, level, options), loss_slope(b, level, options)};
}

EST_NAMESPACE_END
