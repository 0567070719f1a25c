#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "numerics/alloc.hpp"

namespace numerics {

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition of a published operation.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf surfaced where only finite values are valid.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Dense row-major array of doubles. Payload allocations go through
// TrackedAllocator so the bench harness can observe transient memory.
class Tensor {
 public:
  using DataVec = std::vector<double, TrackedAllocator<double>>;

  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::initializer_list<double> values);
  Tensor(Shape shape, std::span<const double> values);

  static Tensor scalar(double v);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t extent(std::size_t dim) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return {data_.data(), data_.size()}; }
  std::span<const double> values() const { return {data_.data(), data_.size()}; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  double& at(std::size_t i);
  double at(std::size_t i) const;
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t i, std::size_t j, std::size_t k);
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  void fill(double v);
  void add_(const Tensor& other);            // elementwise, shapes must match
  void scale_(double s);
  double max_abs_diff(const Tensor& other) const;
  double sum() const;

 private:
  Shape shape_;
  DataVec data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what);
void require_finite(const Tensor& t, std::string_view op);

// Dense kernels. `acc` accumulates into `out` instead of overwriting.
// out = a (m x k) * b (k x n)
void matmul_into(Tensor& out, const Tensor& a, const Tensor& b, bool acc = false);
// out = a (m x k) * b^T (n x k)
void matmul_abt_into(Tensor& out, const Tensor& a, const Tensor& b, bool acc = false);
// out = a^T (k x m) * b (k x n)
void matmul_atb_into(Tensor& out, const Tensor& a, const Tensor& b, bool acc = false);

// Published matmul: shape-checked, result verified finite.
Tensor matmul(const Tensor& a, const Tensor& b);

double softplus(double x);
double sigmoid(double x);
double silu(double x);
Tensor softplus(const Tensor& x);

}  // namespace numerics
