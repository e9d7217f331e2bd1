#include "modalfuse/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "modalfuse/error.hpp"

namespace modalfuse {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw Error(ErrorKind::kDimension, "tensor shape must have rank >= 1");
  for (std::size_t i = 0; i < shape.size(); ++i) {
    // leading dimension of a matrix may be empty (zero-length sequence)
    if (shape[i] == 0 && !(i == 0 && shape.size() == 2)) {
      throw Error(ErrorKind::kDimension,
                  "tensor dimensions must be positive, got " + shape_to_string(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw Error(ErrorKind::kDimension,
                "data length " + std::to_string(data_.size()) + " does not match shape " +
                    shape_to_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::span<const double> data)
    : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}

Tensor Tensor::uninitialized(Shape shape) {
  validate_shape(shape);
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), Storage(n));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::span<const double>(values.begin(), values.size()));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::span<const double>(values.begin(), values.size()));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw Error(ErrorKind::kDimension, "item() on tensor of shape " + shape_to_string(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  return Eigen::Map<const Eigen::ArrayXd>(data_.data(), static_cast<Eigen::Index>(data_.size()))
      .allFinite();
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw Error(ErrorKind::kDimension,
                std::string(what) + " expects a matrix, got " + shape_to_string(t.shape()));
  }
}

}  // namespace modalfuse
