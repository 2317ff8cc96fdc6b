// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <map>
#include <stdexcept>
#include <thread>
#include <vector>

#include "est/errors.hpp"
#include "est/sampler.hpp"

namespace {

using est::ModelConfig;
using est::Rates;
using est::SamplingScheduler;
using est::Stage;
using est::SubnetworkMask;

ModelConfig gpt2_base() {
  ModelConfig c;
  c.n_layers = 12;
  c.n_heads = 12;
  c.head_dim = 64;
  c.hidden = 768;
  c.mlp_inner = 3072;
  c.vocab = 50257;
  c.seq_len = 1024;
  return c;
}

ModelConfig small_config() {
  ModelConfig c;
  c.n_layers = 4;
  c.n_heads = 4;
  c.head_dim = 2;
  c.hidden = 8;
  c.mlp_inner = 10;
  c.vocab = 16;
  c.seq_len = 4;
  return c;
}

// Chi-square statistic of observed counts against equal expected counts.
double chi_square(const std::map<std::vector<std::size_t>, int>& counts, int n_categories, int draws) {
  const double expected = static_cast<double>(draws) / n_categories;
  double x2 = 0;
  for (const auto& [key, observed] : counts) x2 += (observed - expected) * (observed - expected) / expected;
  x2 += expected * (n_categories - static_cast<int>(counts.size()));  // categories never observed
  return x2;
}

TEST(RoundToCount, Examples) {
  EXPECT_EQ(est::round_to_count(0.5, 12), 6u);
  EXPECT_EQ(est::round_to_count(1.0, 7), 7u);
  EXPECT_EQ(est::round_to_count(1.0, 1), 1u);
  EXPECT_EQ(est::round_to_count(0.5, 5), 3u);
  EXPECT_EQ(est::round_to_count(0.01, 5), 1u);
  EXPECT_EQ(est::round_to_count(0.5, 3072), 1536u);
}

TEST(RoundToCount, RejectsRatesOutsideUnitInterval) {
  EXPECT_THROW(est::round_to_count(0.0, 4), est::ConfigError);
  EXPECT_THROW(est::round_to_count(-0.5, 4), est::ConfigError);
  EXPECT_THROW(est::round_to_count(1.01, 4), est::ConfigError);
}

TEST(SampleSubset, FullSizeIsEverything) {
  std::mt19937_64 rng(1);
  EXPECT_EQ(est::sample_subset(5, 5, rng), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_THROW(est::sample_subset(3, 4, rng), std::logic_error);
  EXPECT_THROW(est::sample_subset(3, 0, rng), std::logic_error);
}

TEST(SampleSubset, SortedAndDuplicateFree) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 500; ++i) {
    const auto s = est::sample_subset(30, 1 + i % 30, rng);
    for (std::size_t j = 1; j < s.size(); ++j) ASSERT_LT(s[j - 1], s[j]);
    ASSERT_LT(s.back(), 30u);
  }
}

TEST(SampleSubset, PairsOfFourAreUniform) {
  std::mt19937_64 rng(3);
  std::map<std::vector<std::size_t>, int> counts;
  const int draws = 60000;
  for (int i = 0; i < draws; ++i) ++counts[est::sample_subset(4, 2, rng)];
  ASSERT_EQ(counts.size(), 6u);
  for (const auto& [subset, n] : counts) EXPECT_NEAR(n / static_cast<double>(draws), 1.0 / 6.0, 0.01);
  // Upper 1% point of chi-square with 5 degrees of freedom.
  EXPECT_LT(chi_square(counts, 6, draws), 15.086);
}

TEST(SampleSubset, TwoOfFiveIsUniformOverTenSubsets) {
  std::mt19937_64 rng(4);
  std::map<std::vector<std::size_t>, int> counts;
  const int draws = 60000;
  for (int i = 0; i < draws; ++i) ++counts[est::sample_subset(5, 2, rng)];
  EXPECT_EQ(counts.size(), 10u);
  // Upper 1% point of chi-square with 9 degrees of freedom.
  EXPECT_LT(chi_square(counts, 10, draws), 21.666);
}

TEST(SampleSubset, InclusionProbabilityIsKOverN) {
  std::mt19937_64 rng(5);
  const int draws = 60000;
  std::vector<int> hits(7, 0);
  for (int i = 0; i < draws; ++i) {
    for (std::size_t j : est::sample_subset(7, 3, rng)) ++hits[j];
  }
  for (int h : hits) EXPECT_NEAR(h / static_cast<double>(draws), 3.0 / 7.0, 0.01);
}

TEST(SampleSubset, SeededSequenceRepeats) {
  std::mt19937_64 a(9), b(9);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(est::sample_subset(20, 7, a), est::sample_subset(20, 7, b));
}

TEST(SampleMask, UnitRatesGiveTheFullMask) {
  std::mt19937_64 rng(6);
  EXPECT_EQ(est::sample_mask(gpt2_base(), Rates{1, 1, 1}, rng), SubnetworkMask::full(gpt2_base()));
}

TEST(SampleMask, HalfRatesOnGpt2BaseSizes) {
  const ModelConfig c = gpt2_base();
  std::mt19937_64 rng(7);
  const SubnetworkMask m = est::sample_mask(c, Rates{0.5, 0.5, 0.5}, rng);
  EXPECT_EQ(m.layers.size(), 6u);
  ASSERT_EQ(m.selections.size(), 6u);
  for (const auto& s : m.selections) {
    EXPECT_EQ(s.heads.size(), 6u);
    EXPECT_EQ(s.mlp_cols.size(), 1536u);
  }
  EXPECT_EQ(m.rates, (Rates{0.5, 0.5, 0.5}));
  EXPECT_NO_THROW(m.validate(c));
}

TEST(SampleMask, LayersDrawHeadsIndependently) {
  const ModelConfig c = small_config();
  std::mt19937_64 rng(8);
  const int draws = 6000;
  int disagree = 0;
  for (int i = 0; i < draws; ++i) {
    const SubnetworkMask m = est::sample_mask(c, Rates{0.5, 0.5, 1.0}, rng);
    if (m.selections[0].heads != m.selections[1].heads) ++disagree;
  }
  // Independent uniform pairs from C(4,2) = 6 agree with probability 1/6.
  EXPECT_NEAR(disagree / static_cast<double>(draws), 5.0 / 6.0, 0.02);
}

TEST(SampleMask, InvalidRatePropagates) {
  std::mt19937_64 rng(9);
  EXPECT_THROW(est::sample_mask(small_config(), Rates{0.0, 1, 1}, rng), est::ConfigError);
}

SamplingScheduler two_stage(std::int64_t boundary, std::int64_t total) {
  return SamplingScheduler(std::vector<Stage>{Stage{boundary, Rates{0.5, 0.5, 0.5}}, Stage{total, Rates{}}});
}

TEST(MaskForStep, KeyedByStepAndSeed) {
  const auto sched = two_stage(50, 100);
  const ModelConfig c = small_config();
  EXPECT_EQ(est::mask_for_step(sched, c, {1, 2}, 17), est::mask_for_step(sched, c, {1, 2}, 17));
  int differ_step = 0, differ_seed = 0, differ_stream = 0;
  for (std::int64_t s = 1; s < 50; ++s) {
    differ_step += est::mask_for_step(sched, c, {1, 2}, s) != est::mask_for_step(sched, c, {1, 2}, s + 1);
    differ_seed += est::mask_for_step(sched, c, {1, 2}, s) != est::mask_for_step(sched, c, {2, 2}, s);
    differ_stream += est::mask_for_step(sched, c, {1, 2}, s) != est::mask_for_step(sched, c, {1, 3}, s);
  }
  EXPECT_GT(differ_step, 40);
  EXPECT_GT(differ_seed, 40);
  EXPECT_GT(differ_stream, 40);
}

TEST(MaskForStep, StageBoundaryIsRightInclusive) {
  const auto sched = two_stage(50, 100);
  const ModelConfig c = small_config();
  EXPECT_EQ(est::mask_for_step(sched, c, {1, 2}, 50).rates, (Rates{0.5, 0.5, 0.5}));
  EXPECT_EQ(est::mask_for_step(sched, c, {1, 2}, 51), SubnetworkMask::full(c));
}

TEST(MaskStream, MatchesSynchronousGenerationForThousandSteps) {
  const auto sched = two_stage(600, 1000);
  const ModelConfig c = small_config();
  for (std::size_t capacity : {1u, 4u, 64u}) {
    est::MaskStream stream(sched, c, {11, 3}, 1, capacity);
    for (std::int64_t s = 1; s <= 1000; ++s) {
      if (s % 97 == 0) std::this_thread::yield();
      ASSERT_EQ(stream.next(), est::mask_for_step(sched, c, {11, 3}, s)) << "step " << s << " capacity " << capacity;
    }
    EXPECT_THROW(stream.next(), est::StreamTerminated);
  }
}

TEST(MaskStream, ResumesFromLaterStep) {
  const auto sched = two_stage(20, 40);
  const ModelConfig c = small_config();
  est::MaskStream stream(sched, c, {5, 3}, 25, 2);
  EXPECT_EQ(stream.next_step(), 25);
  for (std::int64_t s = 25; s <= 40; ++s) ASSERT_EQ(stream.next(), est::mask_for_step(sched, c, {5, 3}, s));
}

TEST(MaskStream, ProducerFailureSurfacesAsTerminatedStream) {
  const ModelConfig c = small_config();
  est::MaskStream stream(
      [&](std::int64_t step) {
        if (step == 4) throw std::runtime_error("index generator crashed");
        return SubnetworkMask::full(c);
      },
      1, 10, 2);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(stream.next(), SubnetworkMask::full(c));
  try {
    stream.next();
    FAIL() << "expected StreamTerminated";
  } catch (const est::StreamTerminated& e) {
    EXPECT_NE(std::string(e.what()).find("index generator crashed"), std::string::npos);
  }
}

TEST(MaskStream, DestroyingEarlyDoesNotHang) {
  const auto sched = two_stage(500, 1000);
  for (int i = 0; i < 20; ++i) {
    est::MaskStream stream(sched, small_config(), {1, 1}, 1, 1);
    stream.next();
  }
  SUCCEED();
}

TEST(MaskQueue, FifoAndClose) {
  est::MaskQueue q(2);
  const ModelConfig c = small_config();
  SubnetworkMask a = SubnetworkMask::full(c);
  SubnetworkMask b = a;
  b.layers = {1};
  b.selections.resize(1);
  EXPECT_TRUE(q.push(a));
  EXPECT_TRUE(q.push(b));
  q.close();
  EXPECT_FALSE(q.push(a));
  EXPECT_EQ(q.pop(), a);
  EXPECT_EQ(q.pop(), b);
  EXPECT_THROW(q.pop(), est::StreamTerminated);
  EXPECT_THROW(est::MaskQueue(0), est::ConfigError);
}

}  // namespace
