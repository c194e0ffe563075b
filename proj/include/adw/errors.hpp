#pragma once

#include <stdexcept>
#include <string>

namespace adw {

// Invalid input, config, or file content. CLI maps this family to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Shape/dimension mismatch between tensors, layers, or maps.
class ShapeError : public ValidationError {
 public:
  explicit ShapeError(const std::string& what) : ValidationError(what) {}
};

// Numerical failure at runtime (divergence, non-finite values, I/O that was
// valid to attempt). CLI maps this family to exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace adw
