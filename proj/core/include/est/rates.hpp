// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "est/real.hpp"

EST_NAMESPACE_BEGIN

// Sampling rates for attention heads, MLP intermediate columns and layers,
// each in (0, 1].
struct Rates {
  double head = 1.0;
  double mlp = 1.0;
  double layer = 1.0;

  bool full() const { return head == 1.0 && mlp == 1.0 && layer == 1.0; }
  friend bool operator==(const Rates&, const Rates&) = default;
};

std::string to_string(const Rates& r);

EST_NAMESPACE_END
