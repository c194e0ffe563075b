#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace adw {

// Dense row-major tensor of doubles. Shape is arbitrary rank; most callers
// use rank 1 (vectors) or rank 3 (C,H,W fields).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor vector(std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool all_finite() const;
  // Throws NumericError naming `context` if any entry is non-finite.
  void require_finite(const char* context) const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// 2-D grid of per-position scores: channel summaries, localization maps.
struct ScoreMap {
  int h = 0;
  int w = 0;
  std::vector<double> values;  // values[y*w + x]

  ScoreMap() = default;
  ScoreMap(int h_, int w_) : h(h_), w(w_), values(static_cast<std::size_t>(h_) * w_, 0.0) {}

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * w + x]; }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * w + x]; }
};

// A spatial grid of per-position vectors: h*w positions, dim values each,
// laid out position-major. This is the flow's and discriminator's working
// representation of one feature scale.
struct VectorField {
  int h = 0;
  int w = 0;
  int dim = 0;
  std::vector<double> data;  // data[(y*w + x)*dim + c]

  VectorField() = default;
  VectorField(int h_, int w_, int dim_)
      : h(h_), w(w_), dim(dim_), data(static_cast<std::size_t>(h_) * w_ * dim_, 0.0) {}

  int positions() const { return h * w; }
  double* at(int pos) { return data.data() + static_cast<std::size_t>(pos) * dim; }
  const double* at(int pos) const { return data.data() + static_cast<std::size_t>(pos) * dim; }
};

}  // namespace adw
