#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdd {

using Shape = std::vector<std::size_t>;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Immutable dense array of doubles in row-major order.
///
/// Copies share storage; every operation that "modifies" a tensor builds a
/// new one. A rank-0 tensor (empty shape) holds a single scalar.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_->size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> values() const noexcept { return *data_; }
  const double* data() const noexcept { return data_->data(); }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t i) const;
  /// Value of a single-element tensor.
  double item() const;

  /// Same storage under a new shape with equal element count.
  Tensor reshape(Shape shape) const;
  /// Copy of the contiguous block [first, first + count) along axis 0.
  Tensor rows(std::size_t first, std::size_t count) const;
  std::vector<double> to_vector() const { return *data_; }

  bool all_finite() const noexcept;

  /// Bitwise equality of shape and values.
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

/// Concatenates along axis 0; all trailing extents must agree.
Tensor stack_rows(std::span<const Tensor> parts);

double max_abs_difference(const Tensor& a, const Tensor& b);

}  // namespace pdd
