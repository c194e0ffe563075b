#include "adw/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "adw/errors.hpp"
#include "adw/parallel.hpp"
#include "adw/rng.hpp"

namespace adw {
namespace {

const char* kScaleNames[] = {"full", "half", "quarter"};

void validate_config(const ExtractorConfig& cfg) {
  if (cfg.num_filters < 1) throw ValidationError("extractor: num_filters must be >= 1");
  if (cfg.kernel < 1) throw ValidationError("extractor: kernel must be >= 1");
  if (cfg.pool < 1) throw ValidationError("extractor: pool must be >= 1");
  if (cfg.scale_ratios.size() != 3)
    throw ValidationError("extractor: exactly three scale ratios required");
  for (int r : cfg.scale_ratios)
    if (r < 1) throw ValidationError("extractor: scale ratios must be >= 1");
}

GrayImage downsample_box(const GrayImage& in, int factor) {
  if (factor == 1) return in;
  const int w = in.width / factor;
  const int h = in.height / factor;
  GrayImage out(w, h);
  const double norm = 1.0 / (factor * factor);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) sum += in.at(x * factor + dx, y * factor + dy);
      out.at(x, y) = sum * norm;
    }
  }
  return out;
}

}  // namespace

std::vector<float> extractor_filters(const ExtractorConfig& cfg) {
  RngStream rng = RngStream(cfg.seed).split(0x66696c74);  // filter sub-stream
  const int k = cfg.kernel;
  std::vector<float> filters(static_cast<std::size_t>(cfg.num_filters) * k * k);
  for (int f = 0; f < cfg.num_filters; ++f) {
    double sq = 0.0;
    std::vector<double> raw(static_cast<std::size_t>(k) * k);
    for (auto& v : raw) {
      v = rng.draw_normal();
      sq += v * v;
    }
    const double inv = sq > 0.0 ? 1.0 / std::sqrt(sq) : 1.0;
    for (int i = 0; i < k * k; ++i)
      filters[static_cast<std::size_t>(f) * k * k + i] = static_cast<float>(raw[i] * inv);
  }
  return filters;
}

FeatureTensor conv_relu_pool(const GrayImage& img, const std::vector<float>& filters,
                             int num_filters, int kernel, int pool) {
  const int ch = img.height - kernel + 1;
  const int cw = img.width - kernel + 1;
  const int oh = ch / pool;
  const int ow = cw / pool;
  FeatureTensor out(num_filters, oh, ow);
  const double pool_norm = 1.0 / (pool * pool);

  ADW_PRAGMA_OMP(parallel for schedule(static) collapse(2))
  for (int f = 0; f < num_filters; ++f) {
    for (int oy = 0; oy < oh; ++oy) {
      const float* filt = filters.data() + static_cast<std::size_t>(f) * kernel * kernel;
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int py = 0; py < pool; ++py) {
          for (int px = 0; px < pool; ++px) {
            const int cy = oy * pool + py;
            const int cx = ox * pool + px;
            double conv = 0.0;
            for (int ky = 0; ky < kernel; ++ky)
              for (int kx = 0; kx < kernel; ++kx)
                conv += filt[ky * kernel + kx] * img.at(cx + kx, cy + ky);
            acc += conv > 0.0 ? conv : 0.0;
          }
        }
        out.at(f, oy, ox) = static_cast<float>(acc * pool_norm);
      }
    }
  }
  return out;
}

namespace {

FeatureTensor crop_top_left(const FeatureTensor& t, int h, int w) {
  if (h == t.height && w == t.width) return t;
  FeatureTensor out(t.channels, h, w);
  for (int c = 0; c < t.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = t.at(c, y, x);
  return out;
}

}  // namespace

MultiScaleFeatures extract_features(const Image& image, const ExtractorConfig& cfg) {
  validate_config(cfg);
  const GrayImage gray = to_gray(image);
  const std::vector<float> filters = extractor_filters(cfg);

  MultiScaleFeatures ms;
  for (std::size_t s = 0; s < 3; ++s) {
    const GrayImage scaled = downsample_box(gray, cfg.scale_ratios[s]);
    if (scaled.width < cfg.kernel || scaled.height < cfg.kernel)
      throw ValidationError(std::string("image too small at ") + kScaleNames[s] + " scale");
    FeatureTensor t = conv_relu_pool(scaled, filters, cfg.num_filters, cfg.kernel, cfg.pool);
    if (t.height < 1 || t.width < 1)
      throw ValidationError(std::string("image too small at ") + kScaleNames[s] + " scale");
    ms.scales.push_back(std::move(t));
  }

  // Enforce the halving chain bottom-up: scale i is cropped to at most
  // 2*dim(i+1)+1 so that dim(i)/2 == dim(i+1) exactly.
  for (int s = 1; s >= 0; --s) {
    const int th = ms.scales[s + 1].height;
    const int tw = ms.scales[s + 1].width;
    FeatureTensor& cur = ms.scales[s];
    if (cur.height < 2 * th || cur.width < 2 * tw)
      throw ValidationError(std::string("image too small at ") + kScaleNames[s + 1] +
                            " scale: halving chain unsatisfiable");
    const int nh = std::min(cur.height, 2 * th + 1);
    const int nw = std::min(cur.width, 2 * tw + 1);
    cur = crop_top_left(cur, nh, nw);
  }
  return ms;
}

ScoreMap activation_summary(const FeatureTensor& f) {
  ScoreMap map(f.height, f.width);
  for (int y = 0; y < f.height; ++y) {
    for (int x = 0; x < f.width; ++x) {
      float best = f.at(0, y, x);
      for (int c = 1; c < f.channels; ++c) best = std::max(best, f.at(c, y, x));
      map.at(x, y) = best;
    }
  }
  return map;
}

namespace {

constexpr char kMagic[4] = {'A', 'D', 'W', 'F'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint64_t kMaxTensorValues = 1ull << 31;

template <typename T>
void write_le(std::ofstream& out, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = (static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff;
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
bool read_le(std::ifstream& in, T& v) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (in.gcount() != sizeof(T)) return false;
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) acc |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  v = static_cast<T>(acc);
  return true;
}

}  // namespace

void write_features(const std::string& path, const MultiScaleFeatures& ms) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write feature file: " + path);
  out.write(kMagic, 4);
  write_le<std::uint16_t>(out, kVersion);
  write_le<std::uint16_t>(out, static_cast<std::uint16_t>(ms.scales.size()));
  for (const FeatureTensor& t : ms.scales) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.channels));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.height));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.width));
    static_assert(sizeof(float) == 4);
    for (float v : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      write_le<std::uint32_t>(out, bits);
    }
  }
  if (!out) throw NumericError("feature file write failed: " + path);
}

MultiScaleFeatures read_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open feature file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw ValidationError("bad feature file magic: " + path);
  std::uint16_t version = 0, count = 0;
  if (!read_le(in, version) || !read_le(in, count))
    throw ValidationError("truncated feature file header: " + path);
  if (version != kVersion) throw ValidationError("unsupported feature file version: " + path);

  MultiScaleFeatures ms;
  for (int s = 0; s < count; ++s) {
    const std::string where = "scale " + std::to_string(s) + " of " + path;
    std::uint32_t c = 0, h = 0, w = 0;
    if (!read_le(in, c) || !read_le(in, h) || !read_le(in, w))
      throw ValidationError("feature file truncated at " + where);
    const std::uint64_t n = static_cast<std::uint64_t>(c) * h * w;
    if (c == 0 || h == 0 || w == 0 || n > kMaxTensorValues)
      throw ValidationError("feature tensor dimension overflow at " + where);
    FeatureTensor t(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
    for (std::uint64_t i = 0; i < n; ++i) {
      std::uint32_t bits;
      if (!read_le(in, bits)) throw ValidationError("feature file truncated at " + where);
      std::memcpy(&t.data[i], &bits, 4);
    }
    ms.scales.push_back(std::move(t));
  }
  return ms;
}

std::vector<VectorField> to_fields(const MultiScaleFeatures& ms) {
  std::vector<VectorField> fields;
  fields.reserve(ms.scales.size());
  for (const FeatureTensor& t : ms.scales) {
    VectorField f(t.height, t.width, t.channels);
    for (int y = 0; y < t.height; ++y)
      for (int x = 0; x < t.width; ++x)
        for (int c = 0; c < t.channels; ++c)
          f.at(y * t.width + x)[c] = static_cast<double>(t.at(c, y, x));
    fields.push_back(std::move(f));
  }
  return fields;
}

Standardizer Standardizer::fit(const std::vector<MultiScaleFeatures>& batch) {
  if (batch.empty()) throw ValidationError("standardizer: empty training batch");
  const std::size_t num_scales = batch.front().scales.size();
  Standardizer st;
  st.mean.resize(num_scales);
  st.stddev.resize(num_scales);
  for (std::size_t s = 0; s < num_scales; ++s) {
    const int channels = batch.front().scales[s].channels;
    std::vector<double> sum(channels, 0.0), sumsq(channels, 0.0);
    std::uint64_t count = 0;
    for (const MultiScaleFeatures& ms : batch) {
      if (ms.scales.size() != num_scales)
        throw ShapeError("standardizer: inconsistent scale counts in batch");
      const FeatureTensor& t = ms.scales[s];
      if (t.channels != channels)
        throw ShapeError("standardizer: inconsistent channel counts in batch");
      for (int c = 0; c < channels; ++c)
        for (int y = 0; y < t.height; ++y)
          for (int x = 0; x < t.width; ++x) {
            const double v = t.at(c, y, x);
            sum[c] += v;
            sumsq[c] += v * v;
          }
      count += static_cast<std::uint64_t>(t.height) * t.width;
    }
    st.mean[s].resize(channels);
    st.stddev[s].resize(channels);
    for (int c = 0; c < channels; ++c) {
      const double m = sum[c] / count;
      const double var = std::max(0.0, sumsq[c] / count - m * m);
      st.mean[s][c] = m;
      st.stddev[s][c] = std::max(std::sqrt(var), 1e-6);
    }
  }
  return st;
}

std::vector<VectorField> Standardizer::apply(const MultiScaleFeatures& ms) const {
  if (ms.scales.size() != mean.size())
    throw ShapeError("standardizer: scale count mismatch");
  std::vector<VectorField> fields = to_fields(ms);
  for (std::size_t s = 0; s < fields.size(); ++s) {
    VectorField& f = fields[s];
    if (static_cast<std::size_t>(f.dim) != mean[s].size())
      throw ShapeError("standardizer: channel count mismatch");
    for (int pos = 0; pos < f.positions(); ++pos) {
      double* v = f.at(pos);
      for (int c = 0; c < f.dim; ++c) v[c] = (v[c] - mean[s][c]) / stddev[s][c];
    }
  }
  return fields;
}

Mask mask_to_grid(const Mask& mask, int grid_h, int grid_w) {
  if (grid_h < 1 || grid_w < 1) throw ValidationError("mask_to_grid: grid dims must be >= 1");
  if (mask.width < 1 || mask.height < 1) throw ValidationError("mask_to_grid: empty mask");
  Mask grid(grid_w, grid_h);
  for (int gy = 0; gy < grid_h; ++gy) {
    const int y0 = static_cast<int>(static_cast<std::int64_t>(gy) * mask.height / grid_h);
    const int y1 = static_cast<int>(static_cast<std::int64_t>(gy + 1) * mask.height / grid_h);
    for (int gx = 0; gx < grid_w; ++gx) {
      const int x0 = static_cast<int>(static_cast<std::int64_t>(gx) * mask.width / grid_w);
      const int x1 = static_cast<int>(static_cast<std::int64_t>(gx + 1) * mask.width / grid_w);
      int fg = 0, total = 0;
      for (int y = y0; y < std::max(y1, y0 + 1); ++y)
        for (int x = x0; x < std::max(x1, x0 + 1); ++x) {
          ++total;
          fg += mask.at(std::min(x, mask.width - 1), std::min(y, mask.height - 1)) ? 1 : 0;
        }
      grid.set(gx, gy, 2 * fg >= total);
    }
  }
  return grid;
}

}  // namespace adw
