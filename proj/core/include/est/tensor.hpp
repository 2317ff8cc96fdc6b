// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "est/real.hpp"

EST_NAMESPACE_BEGIN

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major tensor with an optional gradient buffer of the same shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real{0});
  Tensor(Shape shape, std::vector<Real> data);

  // 2-D literal, mostly for tests: Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Leading dimension and product of the remaining ones.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  Real* ptr() { return data_.data(); }
  const Real* ptr() const { return data_.data(); }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool has_grad() const { return !grad_.empty(); }
  std::span<Real> grad() { return grad_; }
  std::span<const Real> grad() const { return grad_; }
  // Allocates a zeroed gradient if none exists.
  std::span<Real> ensure_grad();
  void zero_grad();
  void clear_grad() { grad_.clear(); }

  void fill(Real value);

 private:
  Shape shape_;
  std::vector<Real> data_;
  std::vector<Real> grad_;
};

EST_NAMESPACE_END
