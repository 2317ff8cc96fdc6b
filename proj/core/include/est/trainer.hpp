// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "est/checkpoint.hpp"
#include "est/config.hpp"
#include "est/corpus.hpp"
#include "est/cost_model.hpp"
#include "est/loss_log.hpp"

EST_NAMESPACE_BEGIN

struct TrainData {
  Corpus train;
  Corpus eval;
};

// Loads data.train and data.eval, or splits a held-out tail off data.train
// when data.eval is empty. Both must cover seq_len + 1 tokens and respect the
// model vocabulary.
TrainData load_train_data(const TrainConfig& config);

struct TrainOptions {
  const Checkpoint* resume = nullptr;
  std::int64_t stop_after = 0;  // stop once this step completes; 0 runs to the end
  std::function<void(const Checkpoint&)> on_checkpoint;
  std::function<void(const LossRecord&)> on_step;
  std::function<void(const EvalRecord&)> on_eval;
};

struct TrainResult {
  LossLog log;
  std::vector<EvalRecord> evals;
  Checkpoint final_checkpoint;
  CostReport planned;  // closed-form cost of the configured scheduler
};

// Runs staged subnetwork training. Each step draws its mask from the
// asynchronous stream (or uses the full model when sampling is off), its
// batch from the data stream keyed by the step, then does forward, backward,
// global-norm clipping and an AdamW update. A non-finite loss or gradient
// raises NumericalError; checkpoints already handed to on_checkpoint stay
// valid.
TrainResult train(const TrainConfig& config, const TrainData& data, const TrainOptions& options = {});

// Mean full-model cross-entropy over the deterministic evaluation windows.
double evaluate(ModelParams& params, const Corpus& corpus, std::size_t n_batches, std::size_t batch_size);

EST_NAMESPACE_END
