// SPDX-License-Identifier: Apache-2.0
#include "est/trainer.hpp"

#include <cmath>
#include <memory>
#include <optional>

#include "est/errors.hpp"
#include "est/random.hpp"
#include "est/sampler.hpp"

EST_NAMESPACE_BEGIN

namespace {

void check_corpus(const Corpus& c, const ModelConfig& model, const char* what) {
  if (c.vocab > model.vocab) {
    throw ConfigError(std::string(what) + " corpus vocabulary " + std::to_string(c.vocab) + " exceeds model.vocab " +
                      std::to_string(model.vocab));
  }
  if (c.size() < model.seq_len + 1) {
    throw ConfigError(std::string(what) + " corpus has " + std::to_string(c.size()) +
                      " tokens; need at least seq_len+1 = " + std::to_string(model.seq_len + 1));
  }
}

Checkpoint snapshot(const TrainConfig& cfg, std::int64_t step, const ModelParams& params, const AdamW& opt,
                    const LossLog& log, const std::vector<EvalRecord>& evals) {
  Checkpoint ck;
  ck.config = cfg;
  ck.step = step;
  ck.sampler = {cfg.seed.seed, cfg.seed.sampler_stream, step + 1};
  ck.data = {cfg.seed.seed, cfg.seed.data_stream, step + 1};
  ck.params = params;
  ck.params.zero_grad();
  for (auto& p : ck.params.named()) p.tensor->clear_grad();
  ck.optimizer = opt.slots();
  ck.log = log;
  ck.evals = evals;
  return ck;
}

}  // namespace

TrainData load_train_data(const TrainConfig& config) {
  if (config.data.train_path.empty()) throw ConfigError("data.train is required");
  TrainData data;
  Corpus full = load_corpus(config.data.train_path);
  if (config.data.eval_path.empty()) {
    std::tie(data.train, data.eval) = split_holdout(full, config.data.holdout_fraction);
  } else {
    data.train = std::move(full);
    data.eval = load_corpus(config.data.eval_path);
  }
  check_corpus(data.train, config.model, "training");
  check_corpus(data.eval, config.model, "evaluation");
  return data;
}

double evaluate(ModelParams& params, const Corpus& corpus, std::size_t n_batches, std::size_t batch_size) {
  const auto batches = fixed_batches(corpus, n_batches, batch_size, params.config.seq_len);
  const auto mask = SubnetworkMask::full(params.config);
  double total = 0;
  for (const auto& b : batches) {
    Tape tape;
    total += static_cast<double>(model_loss(tape, params, b.inputs, b.targets, b.layout, mask).value()[0]);
  }
  return total / static_cast<double>(batches.size());
}

TrainResult train(const TrainConfig& cfg, const TrainData& data, const TrainOptions& options) {
  cfg.validate();
  check_corpus(data.train, cfg.model, "training");
  check_corpus(data.eval, cfg.model, "evaluation");

  const ModuleCosts costs =
      module_costs(cfg.model, static_cast<std::int64_t>(cfg.batch_size * cfg.model.seq_len), cfg.backward_multiplier);
  const LrSchedule schedule = cfg.lr_schedule();

  ModelParams params;
  AdamW opt;
  LossLog log;
  std::vector<EvalRecord> evals;
  std::int64_t first_step = 1;
  if (options.resume) {
    const Checkpoint& ck = *options.resume;
    if (config_hash(ck.config) != config_hash(cfg)) throw ConfigError("checkpoint was written by a different config");
    params = ck.params;
    opt = AdamW(cfg.optimizer, params);
    if (ck.optimizer.size() != opt.slots().size()) throw IoError("checkpoint optimizer state does not match model");
    opt.slots() = ck.optimizer;
    log = ck.log;
    evals = ck.evals;
    first_step = ck.step + 1;
    if (ck.sampler.next_step != first_step || ck.data.next_step != first_step) {
      throw IoError("checkpoint stream positions disagree with its step");
    }
  } else {
    params = ModelParams::initialize(cfg.model, cfg.seed.seed);
    opt = AdamW(cfg.optimizer, params);
  }

  const std::int64_t last_step = options.stop_after > 0 ? std::min(options.stop_after, cfg.steps) : cfg.steps;
  std::optional<MaskStream> stream;
  if (cfg.sampling && first_step <= cfg.steps) {
    stream.emplace(cfg.scheduler, cfg.model, cfg.sampler_seed(), first_step, cfg.queue_capacity);
  }
  const SubnetworkMask full_mask = SubnetworkMask::full(cfg.model);
  double cum_flops = log.empty() ? 0.0 : log.back().cum_flops;

  auto run_eval = [&](std::int64_t step) {
    EvalRecord r{step, evaluate(params, data.eval, cfg.eval_batches, cfg.batch_size)};
    evals.push_back(r);
    if (options.on_eval) options.on_eval(r);
  };

  for (std::int64_t step = first_step; step <= last_step; ++step) {
    const SubnetworkMask mask = stream ? stream->next() : full_mask;
    auto data_rng = keyed_rng(cfg.seed.seed, cfg.seed.data_stream, static_cast<std::uint64_t>(step));
    const Batch batch = next_batch(data.train, cfg.batch_size, cfg.model.seq_len, data_rng);

    for (auto& p : params.named()) p.tensor->clear_grad();
    Tape tape;
    Var loss = model_loss(tape, params, batch.inputs, batch.targets, batch.layout, mask);
    const double loss_value = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(loss_value)) throw NumericalError("non-finite loss at step " + std::to_string(step));
    tape.backward(loss);
    clip_grad_norm(params, cfg.clip_norm);
    const double lr = schedule.at(step);
    opt.step(params, lr);

    cum_flops += measured_flops(mask, cfg.model, costs);
    const LossRecord rec{step, cfg.scheduler.stage_index(step) + 1, loss_value, lr, cum_flops};
    log.append(rec);
    if (options.on_step) options.on_step(rec);

    if (cfg.eval_interval > 0 && step % cfg.eval_interval == 0 && step != cfg.steps) run_eval(step);
    if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 && step != cfg.steps &&
        options.on_checkpoint) {
      options.on_checkpoint(snapshot(cfg, step, params, opt, log, evals));
    }
  }
  if (last_step == cfg.steps && (evals.empty() || evals.back().step != cfg.steps)) run_eval(cfg.steps);

  TrainResult result;
  result.final_checkpoint = snapshot(cfg, std::max(last_step, first_step - 1), params, opt, log, evals);
  if (options.on_checkpoint) options.on_checkpoint(result.final_checkpoint);
  result.log = std::move(log);
  result.evals = std::move(evals);
  result.planned = total_cost(cfg.scheduler, costs, cfg.model.n_layers);
  return result;
}

EST_NAMESPACE_END
