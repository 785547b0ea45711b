#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <png.h>

#include "wrel/common.hpp"
#include "wrel/data/sample.hpp"

namespace wrel::data {

namespace detail {
inline std::vector<std::uint8_t> read_png(const std::string& path, std::uint32_t format, int& height, int& width) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("cannot read PNG " + path + ": " + img.message);
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path + ": " + img.message);
  }
  height = static_cast<int>(img.height);
  width = static_cast<int>(img.width);
  return buf;
}

inline void write_png(const std::string& path, std::uint32_t format, int height, int width,
                      const std::vector<std::uint8_t>& buf) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path + ": " + img.message);
}
}  // namespace detail

/// 8-bit quantization used on disk; values produced by the synthetic
/// generator are already multiples of 1/255 and round-trip exactly.
inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}
inline float from_byte(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

inline Image read_image(const std::string& path) {
  Image im;
  auto buf = detail::read_png(path, PNG_FORMAT_RGB, im.height, im.width);
  im.rgb.resize(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) im.rgb[i] = from_byte(buf[i]);
  return im;
}

inline void write_image(const std::string& path, const Image& im) {
  std::vector<std::uint8_t> buf(im.rgb.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(im.rgb[i]);
  detail::write_png(path, PNG_FORMAT_RGB, im.height, im.width, buf);
}

inline Mask read_mask(const std::string& path) {
  Mask m;
  auto buf = detail::read_png(path, PNG_FORMAT_GRAY, m.height, m.width);
  m.data.resize(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) m.data[i] = buf[i] != 0;
  return m;
}

inline void write_mask(const std::string& path, const Mask& m) {
  std::vector<std::uint8_t> buf(m.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = m.data[i] ? 255 : 0;
  detail::write_png(path, PNG_FORMAT_GRAY, m.height, m.width, buf);
}

}  // namespace wrel::data
