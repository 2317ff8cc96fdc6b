// SPDX-License-Identifier: Apache-2.0
#pragma once

// Engine-wide floating-point precision, fixed at build time. fp32 is the
// default; defining EST_REAL_FP64 builds the double-precision engine used by
// the oracle tests. Each precision gets its own inline namespace so the two
// builds can be linked side by side without ODR clashes.

#if defined(EST_REAL_FP64)
#define EST_PRECISION_NS fp64
#else
#define EST_PRECISION_NS fp32
#endif

#define EST_NAMESPACE_BEGIN \
  namespace est {           \
  inline namespace EST_PRECISION_NS {
#define EST_NAMESPACE_END \
  }                       \
  }

EST_NAMESPACE_BEGIN

#if defined(EST_REAL_FP64)
using Real = double;
inline constexpr const char* kPrecisionName = "fp64";
#else
using Real = float;
inline constexpr const char* kPrecisionName = "fp32";
#endif

EST_NAMESPACE_END
