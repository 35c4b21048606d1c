#pragma once

#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>

#include <png.h>

#include "ctxseg/common.hpp"
#include "ctxseg/image.hpp"

namespace ctxseg {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

/// Reads an 8- or 16-bit PNG as grayscale in [0,1]. Color images are
/// converted with libpng's luma weights; palette and alpha are resolved.
inline Image read_png_gray(const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw DataError("cannot open image file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng init failed");
  }

  std::vector<png_byte> buf;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unreadable PNG file: " + path.string());
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (depth == 16) png_set_swap(png);  // stream is big-endian

  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);

  std::size_t rowbytes = png_get_rowbytes(png, info);
  buf.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = buf.data() + r * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(static_cast<int>(h), static_cast<int>(w));
  if (depth == 16) {
    for (std::size_t i = 0; i < img.size(); ++i) {
      std::uint16_t v;
      std::memcpy(&v, buf.data() + 2 * i, 2);
      img.v[i] = static_cast<float>(v) / 65535.0f;
    }
  } else {
    for (std::size_t i = 0; i < img.size(); ++i)
      img.v[i] = static_cast<float>(buf[i]) / 255.0f;
  }
  return img;
}

namespace detail {

inline void write_png(const std::filesystem::path& path, int h, int w,
                      int depth, int color, const std::vector<png_byte>& data,
                      std::size_t rowbytes) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot open file for writing: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG write failed: " + path.string());
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
               depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (depth == 16) png_set_swap(png);

  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int r = 0; r < h; ++r)
    rows[static_cast<std::size_t>(r)] = const_cast<png_bytep>(data.data() + static_cast<std::size_t>(r) * rowbytes);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

/// 16-bit grayscale write; exact for values on the k/65535 grid.
inline void write_png_gray16(const std::filesystem::path& path, const Image& img) {
  std::vector<png_byte> data(img.size() * 2);
  for (std::size_t i = 0; i < img.size(); ++i) {
    auto q = static_cast<std::uint16_t>(std::lround(clamp01(img.v[i]) * 65535.0f));
    std::memcpy(data.data() + 2 * i, &q, 2);
  }
  detail::write_png(path, img.h, img.w, 16, PNG_COLOR_TYPE_GRAY, data,
                    static_cast<std::size_t>(img.w) * 2);
}

inline void write_png_gray8(const std::filesystem::path& path, const Grid<std::uint8_t>& img) {
  std::vector<png_byte> data(img.v.begin(), img.v.end());
  detail::write_png(path, img.h, img.w, 8, PNG_COLOR_TYPE_GRAY, data,
                    static_cast<std::size_t>(img.w));
}

/// Interleaved RGB, 8-bit per channel; rgb.size() == h*w*3.
inline void write_png_rgb8(const std::filesystem::path& path, int h, int w,
                           const std::vector<std::uint8_t>& rgb) {
  std::vector<png_byte> data(rgb.begin(), rgb.end());
  detail::write_png(path, h, w, 8, PNG_COLOR_TYPE_RGB, data,
                    static_cast<std::size_t>(w) * 3);
}

}  // namespace ctxseg
