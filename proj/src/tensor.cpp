#include "pdd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace pdd {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  for (auto extent : shape_) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
  }
  if (element_count(shape_) != values.size()) {
    throw ShapeError("shape " + shape_string(shape_) + " needs " + std::to_string(element_count(shape_)) +
                     " values, got " + std::to_string(values.size()));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

double Tensor::at(std::size_t i) const {
  if (i >= size()) throw ShapeError("index " + std::to_string(i) + " out of range for shape " + shape_string(shape_));
  return (*data_)[i];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_string(shape_));
  return (*data_)[0];
}

Tensor Tensor::reshape(Shape shape) const {
  if (element_count(shape) != size()) {
    throw ShapeError("reshape: cannot view " + shape_string(shape_) + " as " + shape_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

Tensor Tensor::rows(std::size_t first, std::size_t count) const {
  if (rank() == 0 || count == 0 || first + count > shape_[0]) {
    throw ShapeError("rows(" + std::to_string(first) + ", " + std::to_string(count) + ") out of range for " +
                     shape_string(shape_));
  }
  const std::size_t stride = size() / shape_[0];
  std::vector<double> block(data_->begin() + static_cast<std::ptrdiff_t>(first * stride),
                            data_->begin() + static_cast<std::ptrdiff_t>((first + count) * stride));
  Shape shape = shape_;
  shape[0] = count;
  return Tensor(std::move(shape), std::move(block));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_->begin(), data_->end(), [](double v) { return std::isfinite(v); });
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (a.shape_ != b.shape_) return false;
  if (a.data_ == b.data_) return true;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Tensor stack_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("stack_rows: no tensors given");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t total = 0;
  std::vector<double> values;
  for (const auto& part : parts) {
    Shape part_tail(part.shape().begin() + 1, part.shape().end());
    if (part.rank() == 0 || part_tail != tail) {
      throw ShapeError("stack_rows: shape " + shape_string(part.shape()) + " does not match " +
                       shape_string(parts[0].shape()));
    }
    total += part.shape()[0];
    values.insert(values.end(), part.values().begin(), part.values().end());
  }
  Shape shape{total};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return Tensor(std::move(shape), std::move(values));
}

double max_abs_difference(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_difference: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace pdd
