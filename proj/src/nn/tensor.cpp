#include "regrelax/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace regrelax::nn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, Real fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  if (shape_.empty()) throw ShapeError("tensor: empty shape");
}

Tensor::Tensor(Shape shape, std::vector<Real> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw ShapeError("tensor: empty shape");
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<Real> values) {
  return Tensor({rows, cols}, std::vector<Real>(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() == 2) return shape_[0];
  throw ShapeError("tensor: rows() on rank-" + std::to_string(shape_.size()) +
                   " tensor");
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() == 2) return shape_[1];
  throw ShapeError("tensor: cols() on rank-" + std::to_string(shape_.size()) +
                   " tensor");
}

Real Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("tensor: item() on non-scalar " + shape_str(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](Real v) { return std::isfinite(v); });
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Real m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Real l2_norm(std::span<const Real> v) {
  Real s = 0.0;
  for (Real x : v) s += x * x;
  return std::sqrt(s);
}

Real squared_distance(std::span<const Real> a, std::span<const Real> b) {
  Real s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Real d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace regrelax::nn
