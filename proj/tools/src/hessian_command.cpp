// SPDX-License-Identifier: Apache-2.0
// Compiled once per engine precision.
#include "hessian_command.hpp"

#include "est/checkpoint.hpp"
#include "est/diagnostics.hpp"
#include "est/errors.hpp"
#include "est/trainer.hpp"

namespace est_tools {

#ifdef EST_REAL_FP64
HessianOutcome run_hessian_fp64(const HessianRequest& request) {
#else
HessianOutcome run_hessian_fp32(const HessianRequest& request) {
#endif
  using namespace est;
  Checkpoint ck = read_checkpoint(request.checkpoint);
  const Corpus corpus = load_corpus(request.data);
  if (corpus.vocab > ck.config.model.vocab) throw ConfigError("data vocabulary exceeds the model's");
  ModelParams& params = ck.params;
  auto batches = fixed_batches(corpus, request.batches, ck.config.batch_size, ck.config.model.seq_len);

  HessianOutcome out;
  out.eval_loss = evaluate(params, corpus, request.batches, ck.config.batch_size);
  const std::vector<double> theta = params.flatten();
  const GradientFn gradient = model_gradient_fn(params, std::move(batches));

  HutchinsonOptions options;
  options.n_probes = request.probes;
  options.fd_epsilon = request.fd_epsilon;
  options.seed = request.seed;
  const HessianTraceEstimate est = hessian_trace(theta, gradient, options);
  out.value = est.value;
  out.n_probes = est.n_probes;
  out.std_error = est.std_error;
  out.fd_epsilon = est.fd_epsilon;
  out.probes = est.probes;
  if (request.stability_check) {
    options.fd_epsilon = request.fd_epsilon / 10;
    out.check_value = hessian_trace(theta, gradient, options).value;
  }
  return out;
}

}  // namespace est_tools
