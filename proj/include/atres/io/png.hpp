#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "atres/error.hpp"
#include "atres/patch.hpp"
#include "atres/stitch.hpp"

namespace atres::io {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw DataError("cannot open '" + path + "'");
  return f;
}

struct RawImage {
  std::size_t width = 0, height = 0, channels = 0, bit_depth = 0;
  std::vector<std::uint8_t> bytes;  // big-endian samples for 16-bit
};

// Only C objects live across setjmp in these two functions.
inline bool png_read_raw(std::FILE* fp, RawImage& out, bool keep16, std::string& err) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    err = "png_create_read_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep>* rows = new std::vector<png_bytep>();
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    delete rows;
    err = "corrupt or unsupported PNG";
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (!keep16 && depth == 16) png_set_scale_16(png);
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out.bytes.resize(rowbytes * out.height);
  rows->resize(out.height);
  for (std::size_t y = 0; y < out.height; ++y) (*rows)[y] = out.bytes.data() + y * rowbytes;
  png_read_image(png, rows->data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  delete rows;
  return true;
}

inline bool png_write_raw(std::FILE* fp, const RawImage& img, std::string& err) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    err = "png_create_write_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep>* rows = new std::vector<png_bytep>(img.height);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    delete rows;
    err = "PNG encoding failed";
    return false;
  }
  png_init_io(png, fp);
  const int color = img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               static_cast<int>(img.bit_depth), color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t rowbytes = img.width * img.channels * (img.bit_depth / 8);
  for (std::size_t y = 0; y < img.height; ++y) {
    (*rows)[y] = const_cast<png_bytep>(img.bytes.data() + y * rowbytes);
  }
  png_write_image(png, rows->data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  delete rows;
  return true;
}

inline RawImage read_raw(const std::string& path, bool keep16) {
  auto f = open_file(path, "rb");
  RawImage raw;
  std::string err;
  if (!png_read_raw(f.get(), raw, keep16, err)) throw DataError("reading '" + path + "': " + err);
  return raw;
}

inline void write_raw(const std::string& path, const RawImage& raw) {
  auto f = open_file(path, "wb");
  std::string err;
  if (!png_write_raw(f.get(), raw, err)) throw DataError("writing '" + path + "': " + err);
}

}  // namespace detail

// Any 8/16-bit PNG as 8-bit RGB (gray is replicated, alpha dropped).
inline ImageRGB read_rgb(const std::string& path) {
  const auto raw = detail::read_raw(path, false);
  ImageRGB img(raw.width, raw.height);
  const std::size_t ch = raw.channels;
  for (std::size_t i = 0; i < raw.width * raw.height; ++i) {
    const std::uint8_t* s = raw.bytes.data() + i * ch;
    for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = ch >= 3 ? s[c] : s[0];
  }
  return img;
}

inline void write_rgb(const std::string& path, const ImageRGB& img) {
  img.validate();
  detail::write_raw(path, {img.width, img.height, 3, 8, img.pixels});
}

// Mask PNG: first channel >= 128 is foreground.
inline BinaryMask read_mask(const std::string& path) {
  const auto raw = detail::read_raw(path, false);
  BinaryMask m(raw.width, raw.height);
  for (std::size_t i = 0; i < raw.width * raw.height; ++i) m.values[i] = raw.bytes[i * raw.channels] >= 128 ? 1 : 0;
  return m;
}

// 8-bit gray {0, 255}.
inline void write_mask(const std::string& path, const BinaryMask& m) {
  std::vector<std::uint8_t> bytes(m.values.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = m.values[i] ? 255 : 0;
  detail::write_raw(path, {m.width, m.height, 1, 8, std::move(bytes)});
}

inline BinaryMask to_mask(const SegmentationMap& m) {
  if (m.kind != SegmentationMap::Kind::binary) throw ShapeError("to_mask: expected a binary map");
  BinaryMask out(m.width, m.height);
  for (std::size_t i = 0; i < m.values.size(); ++i) out.values[i] = m.values[i] != 0.0f ? 1 : 0;
  return out;
}

inline SegmentationMap to_map(const BinaryMask& m) {
  SegmentationMap out(m.width, m.height, SegmentationMap::Kind::binary);
  for (std::size_t i = 0; i < m.values.size(); ++i) out.values[i] = m.values[i] ? 1.0f : 0.0f;
  return out;
}

inline void write_binary_map(const std::string& path, const SegmentationMap& m) { write_mask(path, to_mask(m)); }

inline std::uint16_t quantize16(float p) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(p, 0.0f, 1.0f) * 65535.0f));
}

// 16-bit gray, value = round(p * 65535).
inline void write_prob16(const std::string& path, const SegmentationMap& m) {
  std::vector<std::uint8_t> bytes(m.values.size() * 2);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const std::uint16_t q = quantize16(m.values[i]);
    bytes[2 * i] = static_cast<std::uint8_t>(q >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(q & 0xff);
  }
  detail::write_raw(path, {m.width, m.height, 1, 16, std::move(bytes)});
}

inline SegmentationMap read_prob16(const std::string& path) {
  const auto raw = detail::read_raw(path, true);
  if (raw.bit_depth != 16 || raw.channels != 1) throw DataError("'" + path + "' is not a 16-bit gray PNG");
  SegmentationMap m(raw.width, raw.height);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const unsigned q = (unsigned{raw.bytes[2 * i]} << 8) | raw.bytes[2 * i + 1];
    m.values[i] = static_cast<float>(q) / 65535.0f;
  }
  return m;
}

// Source image with predicted foreground tinted green and missed truth
// (when given) tinted red.
inline ImageRGB overlay(const ImageRGB& img, const SegmentationMap& pred, const SegmentationMap* truth = nullptr) {
  ImageRGB out = img;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    std::uint8_t* p = out.pixels.data() + i * 3;
    const bool fg = pred.values[i] != 0.0f;
    const bool miss = truth && !fg && truth->values[i] != 0.0f;
    if (fg) {
      p[0] = static_cast<std::uint8_t>(p[0] / 2);
      p[1] = static_cast<std::uint8_t>(p[1] / 2 + 127);
      p[2] = static_cast<std::uint8_t>(p[2] / 2);
    } else if (miss) {
      p[0] = static_cast<std::uint8_t>(p[0] / 2 + 127);
      p[1] = static_cast<std::uint8_t>(p[1] / 2);
      p[2] = static_cast<std::uint8_t>(p[2] / 2);
    }
  }
  return out;
}

}  // namespace atres::io
