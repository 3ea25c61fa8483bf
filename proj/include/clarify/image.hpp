#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "clarify/errors.hpp"

namespace clarify {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// 8-bit RGB raster, row-major, no padding.
class Image {
 public:
  Image() = default;
  Image(int width, int height, Rgb fill = {}) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw ValidationError("image dimensions must be positive");
    pixels_.resize(static_cast<std::size_t>(width) * height * 3);
    for (std::size_t i = 0; i < pixels_.size(); i += 3) {
      pixels_[i] = fill.r;
      pixels_[i + 1] = fill.g;
      pixels_[i + 2] = fill.b;
    }
  }
  Image(int width, int height, std::vector<std::uint8_t> rgb) : width_(width), height_(height), pixels_(std::move(rgb)) {
    if (width <= 0 || height <= 0) throw ValidationError("image dimensions must be positive");
    if (pixels_.size() != static_cast<std::size_t>(width) * height * 3) {
      throw ValidationError("image buffer does not match dimensions");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return pixels_.empty(); }
  const std::vector<std::uint8_t>& bytes() const { return pixels_; }

  Rgb at(int x, int y) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
  }

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
    const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
    pixels_[i] = c.r;
    pixels_[i + 1] = c.g;
    pixels_[i + 2] = c.b;
  }

  // Sub-image [x0, x1) x [y0, y1), clipped to the raster.
  Image crop(int x0, int y0, int x1, int y1) const {
    x0 = std::clamp(x0, 0, width_);
    x1 = std::clamp(x1, 0, width_);
    y0 = std::clamp(y0, 0, height_);
    y1 = std::clamp(y1, 0, height_);
    if (x1 <= x0 || y1 <= y0) throw ValidationError("empty crop region");
    Image out(x1 - x0, y1 - y0);
    for (int y = y0; y < y1; ++y) {
      std::memcpy(&out.pixels_[static_cast<std::size_t>(y - y0) * out.width_ * 3],
                  &pixels_[(static_cast<std::size_t>(y) * width_ + x0) * 3], static_cast<std::size_t>(x1 - x0) * 3);
    }
    return out;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// Area-averaged resample of a whole image (or a fractional sub-window of it)
// to side x side, channels interleaved, values in [0, 1].
inline std::vector<double> resample_area(const Image& img, int side, double x0, double y0, double x1, double y1) {
  if (side <= 0) throw ValidationError("resample side must be positive");
  std::vector<double> out(static_cast<std::size_t>(side) * side * 3, 0.0);
  const double sx = (x1 - x0) / side, sy = (y1 - y0) / side;
  for (int oy = 0; oy < side; ++oy) {
    const double cy0 = y0 + oy * sy, cy1 = cy0 + sy;
    for (int ox = 0; ox < side; ++ox) {
      const double cx0 = x0 + ox * sx, cx1 = cx0 + sx;
      std::array<double, 3> acc{0, 0, 0};
      double weight = 0.0;
      for (int y = std::max(0, static_cast<int>(std::floor(cy0))); y < std::min(img.height(), static_cast<int>(std::ceil(cy1))); ++y) {
        const double wy = std::min<double>(y + 1, cy1) - std::max<double>(y, cy0);
        if (wy <= 0) continue;
        for (int x = std::max(0, static_cast<int>(std::floor(cx0))); x < std::min(img.width(), static_cast<int>(std::ceil(cx1))); ++x) {
          const double wx = std::min<double>(x + 1, cx1) - std::max<double>(x, cx0);
          if (wx <= 0) continue;
          const Rgb c = img.at(x, y);
          const double w = wx * wy;
          acc[0] += w * c.r;
          acc[1] += w * c.g;
          acc[2] += w * c.b;
          weight += w;
        }
      }
      const std::size_t o = (static_cast<std::size_t>(oy) * side + ox) * 3;
      for (int ch = 0; ch < 3; ++ch) out[o + ch] = weight > 0 ? acc[ch] / (255.0 * weight) : 0.0;
    }
  }
  return out;
}

inline std::vector<double> resample_area(const Image& img, int side) {
  return resample_area(img, side, 0.0, 0.0, img.width(), img.height());
}

inline Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw IoError("cannot read PNG '" + path.string() + "': " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  return Image(static_cast<int>(png.width), static_cast<int>(png.height), std::move(buf));
}

inline Image decode_png(const std::vector<std::uint8_t>& data) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, data.data(), data.size())) {
    throw ParseError(std::string("cannot decode PNG: ") + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw ParseError("cannot decode PNG: " + msg);
  }
  return Image(static_cast<int>(png.width), static_cast<int>(png.height), std::move(buf));
}

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, img.bytes().data(), 0, nullptr)) {
    throw IoError(std::string("cannot size PNG: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, img.bytes().data(), 0, nullptr)) {
    throw IoError(std::string("cannot encode PNG: ") + png.message);
  }
  out.resize(size);
  return out;
}

inline void write_png(const Image& img, const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, img.bytes().data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path.string() + "': " + png.message);
  }
}

inline std::string base64_encode(const std::vector<std::uint8_t>& data) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < data.size(); i += 3) {
    const std::uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < data.size()) {
    std::uint32_t v = data[i] << 16;
    if (i + 1 < data.size()) v |= data[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < data.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = value(c);
    if (v < 0) throw ParseError("invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

}  // namespace clarify
