#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adw/image.hpp"
#include "adw/tensor.hpp"

namespace adw {

// One feature scale: C channels over an H x W grid, channel-major
// (data[(c*H + y)*W + x]). Values are f32 so feature files round-trip
// bitwise.
struct FeatureTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  FeatureTensor() = default;
  FeatureTensor(int c, int h, int w)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, 0.0f) {}

  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

// Exactly three scales (full, half, quarter). H and W halve (integer
// division) between consecutive scales; same channel count everywhere.
struct MultiScaleFeatures {
  std::vector<FeatureTensor> scales;
};

struct ExtractorConfig {
  std::uint64_t seed = 0;
  int num_filters = 8;
  int kernel = 3;
  int pool = 2;
  std::vector<int> scale_ratios = {1, 2, 4};  // downsample divisors
};

// Frozen extractor: grayscale -> per scale box-downsample -> valid conv with
// seeded unit-normalized Gaussian filters -> relu -> average pool. Output
// shapes are cropped (top-left kept) so the halving chain holds exactly.
// Deterministic in (image, cfg.seed). Throws ValidationError when the image
// is too small at the coarsest scale or the chain cannot be satisfied.
MultiScaleFeatures extract_features(const Image& image, const ExtractorConfig& cfg);

// The extractor's filter bank, exposed so tests can pin determinism.
std::vector<float> extractor_filters(const ExtractorConfig& cfg);

// One scale of the extractor: valid conv -> relu -> average pool. OpenMP
// kernel; bit-identical to the serial reference for any thread count.
FeatureTensor conv_relu_pool(const GrayImage& img, const std::vector<float>& filters,
                             int num_filters, int kernel, int pool);

// Per-position max over channels.
ScoreMap activation_summary(const FeatureTensor& f);

// Binary feature file, little-endian: magic "ADWF", version u16 = 1,
// scale count u16, then per scale C,H,W as u32 followed by C*H*W f32.
// read(write(x)) is bitwise identity.
void write_features(const std::string& path, const MultiScaleFeatures& ms);
MultiScaleFeatures read_features(const std::string& path);

// Per-(scale, channel) affine standardization fitted on a training set.
// The flow consumes standardized fields; statistics ride along in its
// checkpoint so scoring uses the training-set normalization.
struct Standardizer {
  std::vector<std::vector<double>> mean;    // [scale][channel]
  std::vector<std::vector<double>> stddev;  // [scale][channel], floored at 1e-6

  static Standardizer fit(const std::vector<MultiScaleFeatures>& batch);
  std::vector<VectorField> apply(const MultiScaleFeatures& ms) const;
};

// Raw (unstandardized) per-scale double fields.
std::vector<VectorField> to_fields(const MultiScaleFeatures& ms);

// Proportional box map of an image-space mask onto an h x w feature grid.
// A cell is foreground iff at least half of its covered pixels are.
Mask mask_to_grid(const Mask& mask, int grid_h, int grid_w);

}  // namespace adw
