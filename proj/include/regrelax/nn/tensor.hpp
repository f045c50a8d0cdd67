#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace regrelax::nn {

using Real = double;
using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array. Matrices are rank 2; vectors are stored as 1×n rows
// when they take part in matrix primitives; scalars have shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0.0);
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor scalar(Real v) { return Tensor({1}, std::vector<Real>{v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<Real> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 view: rank-1 tensors count as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::vector<Real>& values() { return data_; }
  const std::vector<Real>& values() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const Real> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  Real item() const;
  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

// Max |a-b| over matching entries; shapes must agree.
Real max_abs_diff(const Tensor& a, const Tensor& b);
Real l2_norm(std::span<const Real> v);
Real squared_distance(std::span<const Real> a, std::span<const Real> b);

}  // namespace regrelax::nn
