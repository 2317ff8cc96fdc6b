// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "est/real.hpp"

EST_NAMESPACE_BEGIN

// Identifier of the generator construction, recorded in configs and
// checkpoints so that runs stay portable across standard libraries.
inline constexpr const char* kRngAlgorithm = "mt19937_64/seed_seq(seed,stream,counter)";

// Counter-keyed generator: an mt19937_64 seeded through std::seed_seq with
// the 32-bit halves of (seed, stream, counter). Both the engine and seed_seq
// are fully specified by the standard, so the output is portable. Keying by
// counter (the training step) makes any step reproducible without replaying
// earlier ones.
std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter);

// Uniform integer in [0, n) by rejection; n must be positive.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n);

// Uniform double in [0, 1) from the top 53 bits.
double uniform01(std::mt19937_64& rng);

// Standard normal via Box-Muller (one draw per call, second value discarded).
double standard_normal(std::mt19937_64& rng);

EST_NAMESPACE_END
