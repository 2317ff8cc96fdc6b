// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "est/tape.hpp"

EST_NAMESPACE_BEGIN

using TokenId = std::uint32_t;

inline constexpr Real kLayerNormEpsilon = Real(1e-5);

// Differentiable primitives. Every op validates shapes before computing and
// records a backward closure on the operands' tape.

Var add(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, Real factor);
Var sum(Var a);  // scalar [1]

// [m x k] . [k x n]
Var matmul(Var a, Var b);
// [m x k] . [n x k]^T
Var matmul_nt(Var a, Var b);

// Row-wise softmax, stabilised by subtracting the row maximum. NaN input is
// rejected with NumericalError.
Var softmax_rows(Var x);

// Per-row standardisation over the last dimension followed by gain/bias.
Var layer_norm(Var x, Var gain, Var bias);

// tanh approximation of GELU.
Var gelu(Var x);

// Rows of `table` selected by `ids`; out-of-range ids raise IndexError naming
// the position.
Var embedding(Var table, std::span<const TokenId> ids);

// Mean token negative log-likelihood in nats.
Var cross_entropy(Var logits, std::span<const TokenId> targets);

// Columns / rows of `w` in the given order; gradients scatter back to the
// selected entries only.
Var gather_cols(Var w, std::span<const std::size_t> cols);
Var gather_rows(Var w, std::span<const std::size_t> rows);

// Batched causal self-attention. q, k, v are [batch*seq_len x heads*head_dim]
// with head h owning columns [h*head_dim, (h+1)*head_dim). Scores are scaled by
// 1/sqrt(head_dim); position t attends to positions <= t of its own sequence.
Var causal_attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq_len, std::size_t heads,
                     std::size_t head_dim);

// Scalar helpers used by the ops and by reference code in tests.
Real gelu_value(Real x);
Real gelu_derivative(Real x);

EST_NAMESPACE_END
