// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "est/real.hpp"

EST_NAMESPACE_BEGIN
namespace detail {

enum class Trans { kNo, kYes };

// C[m x n] = alpha * op(A) * op(B) + beta * C, row-major with explicit
// leading dimensions.
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, Real alpha, const Real* a,
          std::size_t lda, const Real* b, std::size_t ldb, Real beta, Real* c, std::size_t ldc);

}  // namespace detail
EST_NAMESPACE_END
