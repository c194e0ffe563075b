#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace adw {

// 8-bit image, 1 or 3 channels, row-major interleaved.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;  // data[(y*width + x)*channels + c]

  Image() = default;
  Image(int w, int h, int c)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, 0) {}

  std::uint8_t& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

// Binary foreground mask; value is true where the object is.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // 0 or 1

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool fg) { data[static_cast<std::size_t>(y) * width + x] = fg ? 1 : 0; }
  std::size_t count_foreground() const;
};

// Grayscale double image in [0,1]; the extractor's working format.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  GrayImage() = default;
  GrayImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0.0) {}

  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
};

// I/O. Format chosen by extension: .png, .pgm (gray), .ppm (rgb).
// PNG reading accepts gray/rgb/palette/alpha inputs and normalizes to 8-bit
// gray or rgb. Throws ValidationError on malformed files.
Image read_image(const std::string& path);
void write_image(const std::string& path, const Image& img);

// Masks are single-channel images; a pixel is foreground iff value > 127.
// Multi-channel inputs are converted to gray (channel mean) first.
Mask read_mask(const std::string& path);
void write_mask(const std::string& path, const Mask& mask);

// Channel-mean grayscale conversion, scaled to [0,1].
GrayImage to_gray(const Image& img);

// Exact lossless right-angle rotation (counter-clockwise). angle must be one
// of 90, 180, 270. Quarter turns swap width and height.
Image rotate_image(const Image& img, int angle_deg);
Mask rotate_mask(const Mask& mask, int angle_deg);

}  // namespace adw
