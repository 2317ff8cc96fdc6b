// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

#include "est/real.hpp"

EST_NAMESPACE_BEGIN

// Shape mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Token id or tensor index outside its valid range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Step or argument outside a permitted interval.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Invalid configuration value; the message names the offending field.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Subnetwork mask inconsistent with the model it is applied to.
class MaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Object used in a state that does not permit the call (e.g. a consumed tape).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN or infinity where a finite value is required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File missing, unreadable or malformed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The asynchronous mask producer stopped before delivering the requested mask.
class StreamTerminated : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

EST_NAMESPACE_END
