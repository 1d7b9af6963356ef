#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "hgpose/error.hpp"

namespace hgpose {

/// 8-bit RGB, row-major, interleaved.
struct RgbImage8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

/// Float RGB intensities in [0, 1], row-major, interleaved (H x W x 3).
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), data(h * w * 3, fill) {}

  float& at(std::size_t r, std::size_t c, std::size_t ch) { return data[(r * width + c) * 3 + ch]; }
  float at(std::size_t r, std::size_t c, std::size_t ch) const { return data[(r * width + c) * 3 + ch]; }
};

inline Image to_float(const RgbImage8& img) {
  Image out(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) out.data[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  return out;
}

inline RgbImage8 read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    fail(ErrorCode::IO, "cannot read PNG " + path.string() + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  RgbImage8 img{png.height, png.width, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(png))};
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    fail(ErrorCode::IO, "cannot decode PNG " + path.string() + ": " + png.message);
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, const RgbImage8& img) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    fail(ErrorCode::IO, "cannot write PNG " + path.string() + ": " + png.message);
}

/// Bilinear resampling with pixel-center alignment (source coordinate
/// (dst + 0.5) * in/out - 0.5, clamped to the image).
inline Image resize_bilinear(const Image& src, std::size_t out_h, std::size_t out_w) {
  Image dst(out_h, out_w);
  const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
  std::vector<std::size_t> x0(out_w), x1(out_w);
  std::vector<float> fx(out_w);
  for (std::size_t c = 0; c < out_w; ++c) {
    const double x = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
    x0[c] = static_cast<std::size_t>(x);
    x1[c] = std::min(x0[c] + 1, src.width - 1);
    fx[c] = static_cast<float>(x - static_cast<double>(x0[c]));
  }
  for (std::size_t r = 0; r < out_h; ++r) {
    const double y = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const auto fy = static_cast<float>(y - static_cast<double>(y0));
    for (std::size_t c = 0; c < out_w; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const float top = src.at(y0, x0[c], ch) * (1 - fx[c]) + src.at(y0, x1[c], ch) * fx[c];
        const float bot = src.at(y1, x0[c], ch) * (1 - fx[c]) + src.at(y1, x1[c], ch) * fx[c];
        dst.at(r, c, ch) = top * (1 - fy) + bot * fy;
      }
  }
  return dst;
}

/// Output size when the shorter side is scaled to `short_side`; the long
/// side is rounded to the nearest integer.
inline std::pair<std::size_t, std::size_t> rescaled_size(std::size_t h, std::size_t w, std::size_t short_side) {
  if (h <= w)
    return {short_side, static_cast<std::size_t>(std::lround(static_cast<double>(w) * short_side / static_cast<double>(h)))};
  return {static_cast<std::size_t>(std::lround(static_cast<double>(h) * short_side / static_cast<double>(w))), short_side};
}

inline Image rescale_short_side_image(const Image& img, std::size_t short_side) {
  if (img.height == 0 || img.width == 0) fail(ErrorCode::TooSmall, "empty image");
  const auto [h, w] = rescaled_size(img.height, img.width, short_side);
  return resize_bilinear(img, h, w);
}

}  // namespace hgpose
