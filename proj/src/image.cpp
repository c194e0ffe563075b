#include "adw/image.hpp"

#include <png.h>

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "adw/errors.hpp"

namespace adw {
namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(),
                    [](char a, char b) { return std::tolower(a) == std::tolower(b); });
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Image read_png(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ValidationError("cannot open image: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw ValidationError("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw NumericError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw NumericError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("malformed PNG: " + path);
  }

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_byte color_type = png_get_color_type(png, info);
  const png_byte bit_depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = static_cast<int>(png_get_channels(png, info));
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("unsupported PNG channel count in " + path);
  }

  Image img(width, height, channels);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y)
    rows[y] = img.data.data() + static_cast<std::size_t>(y) * width * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::string& path, const Image& img) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw ValidationError("cannot write image: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw NumericError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw NumericError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw NumericError("PNG write failed: " + path);
  }

  png_init_io(png, file.get());
  const int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, img.width, img.height, 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_const_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = img.data.data() + static_cast<std::size_t>(y) * img.width * img.channels;
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// PGM (P2/P5) and PPM (P3/P6), maxval 255 only.
int next_pnm_int(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comments.
  for (;;) {
    int c = in.peek();
    if (c == EOF) throw ValidationError("truncated PNM header: " + path);
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    break;
  }
  int value = 0;
  if (!(in >> value)) throw ValidationError("malformed PNM header: " + path);
  return value;
}

Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open image: " + path);
  char p = 0, kind = 0;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '2' && kind != '3' && kind != '5' && kind != '6'))
    throw ValidationError("unsupported PNM magic in " + path);
  const bool rgb = (kind == '3' || kind == '6');
  const bool ascii = (kind == '2' || kind == '3');
  const int width = next_pnm_int(in, path);
  const int height = next_pnm_int(in, path);
  const int maxval = next_pnm_int(in, path);
  if (width <= 0 || height <= 0) throw ValidationError("bad PNM dimensions in " + path);
  if (maxval != 255) throw ValidationError("only maxval 255 PNM supported: " + path);

  Image img(width, height, rgb ? 3 : 1);
  if (ascii) {
    for (auto& px : img.data) {
      const int v = next_pnm_int(in, path);
      if (v < 0 || v > 255) throw ValidationError("PNM sample out of range in " + path);
      px = static_cast<std::uint8_t>(v);
    }
  } else {
    in.get();  // single whitespace after maxval
    in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.data.size()))
      throw ValidationError("truncated PNM data: " + path);
  }
  return img;
}

void write_pnm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write image: " + path);
  out << (img.channels == 3 ? "P6" : "P5") << "\n"
      << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
  if (!out) throw NumericError("image write failed: " + path);
}

}  // namespace

std::size_t Mask::count_foreground() const {
  std::size_t n = 0;
  for (std::uint8_t v : data) n += (v != 0);
  return n;
}

Image read_image(const std::string& path) {
  if (ends_with(path, ".png")) return read_png(path);
  if (ends_with(path, ".pgm") || ends_with(path, ".ppm") || ends_with(path, ".pnm"))
    return read_pnm(path);
  throw ValidationError("unsupported image format: " + path);
}

void write_image(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ValidationError("write_image: channels must be 1 or 3");
  if (ends_with(path, ".png")) {
    write_png(path, img);
    return;
  }
  if (ends_with(path, ".pgm") || ends_with(path, ".ppm") || ends_with(path, ".pnm")) {
    if (ends_with(path, ".pgm") && img.channels != 1)
      throw ValidationError("PGM requires a single channel: " + path);
    if (ends_with(path, ".ppm") && img.channels != 3)
      throw ValidationError("PPM requires three channels: " + path);
    write_pnm(path, img);
    return;
  }
  throw ValidationError("unsupported image format: " + path);
}

Mask read_mask(const std::string& path) {
  const Image img = read_image(path);
  Mask mask(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      int sum = 0;
      for (int c = 0; c < img.channels; ++c) sum += img.at(x, y, c);
      mask.set(x, y, sum / img.channels > 127);
    }
  }
  return mask;
}

void write_mask(const std::string& path, const Mask& mask) {
  Image img(mask.width, mask.height, 1);
  for (std::size_t i = 0; i < mask.data.size(); ++i) img.data[i] = mask.data[i] ? 255 : 0;
  write_image(path, img);
}

GrayImage to_gray(const Image& img) {
  GrayImage gray(img.width, img.height);
  const double norm = 1.0 / (255.0 * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      int sum = 0;
      for (int c = 0; c < img.channels; ++c) sum += img.at(x, y, c);
      gray.at(x, y) = sum * norm;
    }
  }
  return gray;
}

namespace {

// Index maps for counter-clockwise rotation. For 90 degrees the source pixel
// of out(x, y) is in(W_out - 1 - y ... ) expressed directly below per angle.
template <typename Pixel, typename GetGet, typename SetSet>
void rotate_generic(int w, int h, int angle, int channels, const GetGet& get, const SetSet& set) {
  if (angle == 180) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < channels; ++c) set(w - 1 - x, h - 1 - y, c, get(x, y, c));
    return;
  }
  // 90 ccw: out has width h, height w; out(x', y') = in(w - 1 - y', x')
  if (angle == 90) {
    for (int yo = 0; yo < w; ++yo)
      for (int xo = 0; xo < h; ++xo)
        for (int c = 0; c < channels; ++c) set(xo, yo, c, get(w - 1 - yo, xo, c));
    return;
  }
  // 270 ccw (= 90 cw): out(x', y') = in(y', h - 1 - x')
  for (int yo = 0; yo < w; ++yo)
    for (int xo = 0; xo < h; ++xo)
      for (int c = 0; c < channels; ++c) set(xo, yo, c, get(yo, h - 1 - xo, c));
}

}  // namespace

Image rotate_image(const Image& img, int angle_deg) {
  if (angle_deg != 90 && angle_deg != 180 && angle_deg != 270)
    throw ValidationError("rotate_image: angle must be 90, 180, or 270");
  const bool quarter = angle_deg != 180;
  Image out(quarter ? img.height : img.width, quarter ? img.width : img.height, img.channels);
  rotate_generic<std::uint8_t>(
      img.width, img.height, angle_deg, img.channels,
      [&](int x, int y, int c) { return img.at(x, y, c); },
      [&](int x, int y, int c, std::uint8_t v) { out.at(x, y, c) = v; });
  return out;
}

Mask rotate_mask(const Mask& mask, int angle_deg) {
  if (angle_deg != 90 && angle_deg != 180 && angle_deg != 270)
    throw ValidationError("rotate_mask: angle must be 90, 180, or 270");
  const bool quarter = angle_deg != 180;
  Mask out(quarter ? mask.height : mask.width, quarter ? mask.width : mask.height);
  rotate_generic<std::uint8_t>(
      mask.width, mask.height, angle_deg, 1,
      [&](int x, int y, int) { return mask.at(x, y) ? 1 : 0; },
      [&](int x, int y, int, int v) { out.set(x, y, v != 0); });
  return out;
}

}  // namespace adw
