#include "adw/tensor.hpp"

#include <cmath>
#include <string>

#include "adw/errors.hpp"

namespace adw {
namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                     " does not match shape product " + std::to_string(shape_product(shape_)));
  }
}

Tensor Tensor::vector(std::vector<double> data) {
  std::vector<std::size_t> shape{data.size()};
  return Tensor(std::move(shape), std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("tensor: axis out of range");
  return shape_[axis];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::require_finite(const char* context) const {
  if (!all_finite()) {
    throw NumericError(std::string(context) + ": non-finite value in tensor");
  }
}

}  // namespace adw
