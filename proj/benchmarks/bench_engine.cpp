// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "est/corpus.hpp"
#include "est/cost_model.hpp"
#include "est/ops.hpp"
#include "est/optimizer.hpp"
#include "est/random.hpp"
#include "est/sampler.hpp"

namespace {

using namespace est;

ModelConfig desk_model() { return ModelConfig{}; }

Tensor random_tensor(Shape shape, std::uint64_t key) {
  auto rng = keyed_rng(key, 0, 0);
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = static_cast<Real>(standard_normal(rng));
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a = random_tensor({512, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    Tape tape;
    Var c = matmul(tape.constant(a), tape.constant(b));
    benchmark::DoNotOptimize(c.value().ptr());
  }
  state.counters["flops"] = benchmark::Counter(2.0 * 512 * n * n, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Matmul)->Arg(128)->Arg(512);

void BM_Attention(benchmark::State& state) {
  const std::size_t batch = 8, seq = 64, heads = 4, dim = 32;
  Tensor q = random_tensor({batch * seq, heads * dim}, 3);
  Tensor k = random_tensor({batch * seq, heads * dim}, 4);
  Tensor v = random_tensor({batch * seq, heads * dim}, 5);
  for (auto _ : state) {
    Tape tape;
    Var out = causal_attention(tape.parameter(q), tape.parameter(k), tape.parameter(v), batch, seq, heads, dim);
    Var loss = sum(out);
    tape.backward(loss);
    q.clear_grad();
    k.clear_grad();
    v.clear_grad();
  }
}
BENCHMARK(BM_Attention);

// One full training step of the desk model at uniform rate p for heads, MLP
// columns and layers.
void BM_TrainStep(benchmark::State& state) {
  const double p = static_cast<double>(state.range(0)) / 100.0;
  const ModelConfig cfg = desk_model();
  ModelParams params = ModelParams::initialize(cfg, 7);
  AdamW opt(AdamWConfig{}, params);
  const Corpus corpus = tokenize_bytes(synthetic_text(200'000, 1));
  const SamplingScheduler sched(std::vector<Stage>{Stage{1'000'000, Rates{p, p, p}}});
  std::int64_t step = 0;
  for (auto _ : state) {
    ++step;
    const SubnetworkMask mask = mask_for_step(sched, cfg, SamplerSeed{1, 1}, step);
    auto rng = keyed_rng(1, 2, static_cast<std::uint64_t>(step));
    const Batch batch = next_batch(corpus, 8, cfg.seq_len, rng);
    for (auto& np : params.named()) np.tensor->clear_grad();
    Tape tape;
    Var loss = model_loss(tape, params, batch.inputs, batch.targets, batch.layout, mask);
    tape.backward(loss);
    clip_grad_norm(params, 1.0);
    opt.step(params, 1e-3);
  }
}
BENCHMARK(BM_TrainStep)->Arg(100)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_SampleMask(benchmark::State& state) {
  const ModelConfig cfg = desk_model();
  const SamplingScheduler sched(std::vector<Stage>{Stage{1'000'000, Rates{0.5, 0.5, 0.5}}});
  std::int64_t step = 0;
  for (auto _ : state) benchmark::DoNotOptimize(mask_for_step(sched, cfg, SamplerSeed{1, 1}, ++step));
}
BENCHMARK(BM_SampleMask);

void BM_MaskStream(benchmark::State& state) {
  const ModelConfig cfg = desk_model();
  const SamplingScheduler sched(std::vector<Stage>{Stage{100'000'000, Rates{0.5, 0.5, 0.5}}});
  MaskStream stream(sched, cfg, SamplerSeed{1, 1}, 1, 4);
  for (auto _ : state) benchmark::DoNotOptimize(stream.next());
}
BENCHMARK(BM_MaskStream);

}  // namespace

BENCHMARK_MAIN();
