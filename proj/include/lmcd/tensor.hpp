#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "lmcd/errors.hpp"
#include "lmcd/rng.hpp"

namespace lmcd {

// Default run precision.  Verification code instantiates the same templates
// with double; the runtime "precision" switch picks which instantiation runs.
using real = float;

// Dense row-major matrix.  Row vectors are 1 x n, scalars 1 x 1.  Data and
// gradient buffers are shared_ptrs so a Tensor handle can be bound into a
// graph while the owner keeps mutating/reading the same storage.
template <typename R>
class Tensor {
 public:
  Tensor() = default;

  Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
    check_extents(rows, cols);
    data_ = std::make_shared<std::vector<R>>(
        static_cast<size_t>(rows) * cols, R(0));
  }

  static Tensor filled(int rows, int cols, R value) {
    Tensor t(rows, cols);
    for (R& x : *t.data_) x = value;
    return t;
  }

  static Tensor from_values(int rows, int cols, std::vector<R> values) {
    Tensor t(rows, cols);
    if (values.size() != t.size()) {
      throw ShapeError("tensor init: expected " + std::to_string(t.size()) +
                       " values, got " + std::to_string(values.size()));
    }
    *t.data_ = std::move(values);
    return t;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return static_cast<size_t>(rows_) * cols_; }
  bool defined() const { return data_ != nullptr; }

  R& at(int i, int j) { return (*data_)[static_cast<size_t>(i) * cols_ + j]; }
  R at(int i, int j) const {
    return (*data_)[static_cast<size_t>(i) * cols_ + j];
  }

  std::vector<R>& data() { return *data_; }
  const std::vector<R>& data() const { return *data_; }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on && !grad_) {
      grad_ = std::make_shared<std::vector<R>>(size(), R(0));
    }
    return *this;
  }

  bool has_grad() const { return grad_ != nullptr; }
  std::vector<R>& grad() {
    if (!grad_) throw StateError("tensor has no gradient buffer");
    return *grad_;
  }
  const std::vector<R>& grad() const {
    if (!grad_) throw StateError("tensor has no gradient buffer");
    return *grad_;
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), R(0));
  }

  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool all_finite() const {
    for (R x : *data_) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  // Deep copy (fresh buffers); gradients are not carried over.
  Tensor clone() const {
    Tensor t(rows_, cols_);
    *t.data_ = *data_;
    t.set_requires_grad(requires_grad_);
    return t;
  }

  void fill_normal(Rng& rng, double stddev) {
    for (R& x : *data_) x = static_cast<R>(rng.normal() * stddev);
  }

  // Xavier/Glorot uniform over fan_in = rows, fan_out = cols.
  void fill_xavier(Rng& rng) {
    const double limit = std::sqrt(6.0 / (rows_ + cols_));
    for (R& x : *data_) x = static_cast<R>(rng.uniform(-limit, limit));
  }

 private:
  static void check_extents(int rows, int cols) {
    if (rows <= 0 || cols <= 0) {
      throw ShapeError("tensor extents must be positive, got " +
                       std::to_string(rows) + "x" + std::to_string(cols));
    }
  }

  int rows_ = 0;
  int cols_ = 0;
  std::shared_ptr<std::vector<R>> data_;
  std::shared_ptr<std::vector<R>> grad_;
  bool requires_grad_ = false;
};

}  // namespace lmcd
