// SPDX-License-Identifier: Apache-2.0
// Desk-scale comparison of staged subnetwork training against full training
// with the same seeds, step count and data order.
#include <chrono>
#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

#include "acceptance.hpp"
#include "est/checkpoint.hpp"
#include "est/config.hpp"
#include "est/corpus.hpp"
#include "est/diagnostics.hpp"
#include "est/trainer.hpp"
#include "hessian_command.hpp"

namespace est_accept {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

const char* kDeskModel = R"(model.n_layers = 4
model.n_heads = 4
model.head_dim = 32
model.hidden = 128
model.mlp_inner = 512
model.seq_len = 64
train.batch_size = 8
scheduler.preset = practical-gpt2
scheduler.scale = 0.02
optimizer.peak_lr = 0.002
lr.warmup_steps = 100
lr.decay = linear
lr.min_lr = 0.0001
eval.interval = 500
eval.batches = 16
)";

constexpr std::size_t kFinalEvalBatches = 64;
constexpr std::size_t kSeeds[] = {1, 2, 3};

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  double est_eval = 0;
  double base_eval = 0;
  double est_flops = 0;
  double base_flops = 0;
  double planned_savings = 0;
  double drop_s2 = 0;
};

struct SavedCheckpoint {
  est::Checkpoint checkpoint;
  double eval = 0;
};

double final_eval(const est::Checkpoint& ck, const est::Corpus& eval) {
  est::ModelParams params = ck.params;
  return est::evaluate(params, eval, kFinalEvalBatches, ck.config.batch_size);
}

}  // namespace

void run_desk(const fs::path& work, Report& report) {
  const auto t0 = Clock::now();
  const auto all = est::tokenize_bytes(est::synthetic_text(2'000'000, 2024));
  auto [train_corpus, eval_corpus] = est::split_holdout(all, 0.05);
  const est::TrainData data{std::move(train_corpus), std::move(eval_corpus)};

  std::vector<SeedOutcome> outcomes;
  std::optional<est::Checkpoint> est_final_seed1;
  std::vector<SavedCheckpoint> baseline_seed1;

  for (std::uint64_t seed : kSeeds) {
    SeedOutcome o;
    o.seed = seed;
    const est::TrainConfig est_cfg =
        est::parse_config(std::string(kDeskModel) + "seed.seed = " + std::to_string(seed) + "\n", "desk");
    est::TrainConfig base_cfg = est_cfg;
    base_cfg.sampling = false;
    base_cfg.checkpoint_interval = seed == kSeeds[0] ? 250 : 0;

    const auto est_run = est::train(est_cfg, data);
    est::TrainOptions base_opts;
    if (seed == kSeeds[0]) {
      base_opts.on_checkpoint = [&](const est::Checkpoint& ck) {
        baseline_seed1.push_back(SavedCheckpoint{ck, final_eval(ck, data.eval)});
      };
    }
    const auto base_run = est::train(base_cfg, data, base_opts);

    o.est_eval = final_eval(est_run.final_checkpoint, data.eval);
    o.base_eval = final_eval(base_run.final_checkpoint, data.eval);
    o.est_flops = est_run.log.back().cum_flops;
    o.base_flops = base_run.log.back().cum_flops;
    o.planned_savings = est_run.planned.savings_fraction;
    o.drop_s2 = est::transition_drop(est_run.log, est_cfg.scheduler, 100).at(1).drop;
    if (seed == kSeeds[0]) est_final_seed1 = est_run.final_checkpoint;

    std::cout << "INFO 8 seed=" << seed << " est_eval=" << fmt(o.est_eval) << " baseline_eval=" << fmt(o.base_eval)
              << " relative_gap=" << fmt(o.est_eval / o.base_eval - 1.0) << " measured_savings="
              << fmt(1.0 - o.est_flops / o.base_flops) << " drop_at_s2=" << fmt(o.drop_s2) << std::endl;
    est_run.log.write_csv(work / ("desk_est_seed" + std::to_string(seed) + ".csv"));
    base_run.log.write_csv(work / ("desk_baseline_seed" + std::to_string(seed) + ".csv"));
    outcomes.push_back(o);
  }

  int loss_ok = 0, drop_ok = 0;
  bool flops_ok = true;
  double measured = 0;
  for (const auto& o : outcomes) {
    if (o.est_eval <= 1.02 * o.base_eval) ++loss_ok;
    if (o.drop_s2 > 0) ++drop_ok;
    measured = 1.0 - o.est_flops / o.base_flops;
    flops_ok = flops_ok && std::abs(measured - o.planned_savings) <= 1e-12 && measured >= 0.26 && measured <= 0.27;
  }
  const double minutes = std::chrono::duration<double>(Clock::now() - t0).count() / 60.0;
  report.line(8, loss_ok >= 2 && flops_ok && drop_ok >= 2 && minutes <= 60.0,
              "(a) eval_within_2pct=" + std::to_string(loss_ok) + "/3 (b) measured_savings=" + fmt(measured) +
                  " planned=" + fmt(outcomes.front().planned_savings) + (flops_ok ? " equal" : " mismatch") +
                  " (c) positive_drop_at_s2=" + std::to_string(drop_ok) + "/3 runtime_min=" + fmt(minutes, 4));

  // Hessian trace at matched eval loss: EST's final checkpoint against the
  // baseline checkpoint whose eval loss is closest.
  const auto t1 = Clock::now();
  const double target = final_eval(*est_final_seed1, data.eval);
  const SavedCheckpoint* match = &baseline_seed1.front();
  for (const auto& s : baseline_seed1) {
    if (std::abs(s.eval - target) < std::abs(match->eval - target)) match = &s;
  }
  est::write_checkpoint(*est_final_seed1, work / "desk_est_final");
  est::write_checkpoint(match->checkpoint, work / "desk_baseline_matched");
  est::save_token_file(data.eval, work / "desk_eval.tok");

  est_tools::HessianRequest req;
  req.data = work / "desk_eval.tok";
  req.probes = 32;
  req.batches = 4;
  req.checkpoint = work / "desk_est_final";
  const auto est_trace = est_tools::run_hessian_fp64(req);
  req.checkpoint = work / "desk_baseline_matched";
  const auto base_trace = est_tools::run_hessian_fp64(req);
  const double seconds = std::chrono::duration<double>(Clock::now() - t1).count();
  report.line(9, est_trace.value <= base_trace.value,
              "est_trace=" + fmt(est_trace.value) + "+-" + fmt(est_trace.std_error, 3) + " (eval " + fmt(target) +
                  ", step " + std::to_string(est_final_seed1->step) + ") baseline_trace=" + fmt(base_trace.value) +
                  "+-" + fmt(base_trace.std_error, 3) + " (eval " + fmt(match->eval) + ", step " +
                  std::to_string(match->checkpoint.step) + ") [" + fmt(seconds, 3) + "s]",
              false);
}

}  // namespace est_accept
