#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <vector>

#include "phymoe/image.hpp"

namespace phymoe {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

}  // namespace

ImageTensor load_image(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail("cannot open image", path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    fail("not a PNG file", path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("libpng init failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("libpng init failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("PNG read error", path);
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);

  if (w == 0 || h == 0) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("zero-sized image", path);
  }

  // Normalize to 8- or 16-bit gray/RGB. Palette and alpha variants are
  // folded into the supported layouts; sub-8-bit gray is expanded.
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // stored big-endian in the file
  png_read_update_info(png, info);

  const int out_depth = png_get_bit_depth(png, info);
  const int out_channels = png_get_channels(png, info);
  if (out_depth != 8 && out_depth != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("unsupported bit depth", path);
  }
  if (out_channels != 1 && out_channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("unsupported channel layout", path);
  }

  const size_t row_bytes = png_get_rowbytes(png, info);
  std::vector<png_byte> raster(row_bytes * h);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raster.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageTensor img(static_cast<int>(h), static_cast<int>(w), out_channels);
  const double scale = out_depth == 8 ? 1.0 / 255.0 : 1.0 / 65535.0;
  for (png_uint_32 y = 0; y < h; ++y) {
    const png_bytep row = rows[y];
    for (png_uint_32 x = 0; x < w; ++x) {
      for (int c = 0; c < out_channels; ++c) {
        double v;
        if (out_depth == 8) {
          v = row[x * out_channels + c];
        } else {
          const uint16_t* row16 = reinterpret_cast<const uint16_t*>(row);
          v = row16[x * out_channels + c];
        }
        img.at(static_cast<int>(y), static_cast<int>(x), c) = v * scale;
      }
    }
  }
  return img;
}

void save_image(const ImageTensor& img, const std::string& path, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16)
    throw std::invalid_argument("bit depth must be 8 or 16");
  if (img.height() == 0) throw std::invalid_argument("empty image");

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail("cannot open for writing", path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("libpng init failed", path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("libpng init failed", path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("PNG write error", path);
  }

  png_init_io(png, fp.get());
  const int color = img.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
               static_cast<png_uint_32>(img.height()), bit_depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);

  const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
  const size_t row_elems = static_cast<size_t>(img.width()) * img.channels();
  if (bit_depth == 8) {
    std::vector<png_byte> row(row_elems);
    for (int y = 0; y < img.height(); ++y) {
      size_t i = 0;
      for (int x = 0; x < img.width(); ++x)
        for (int c = 0; c < img.channels(); ++c)
          row[i++] = static_cast<png_byte>(std::lround(img.at(y, x, c) * maxv));
      png_write_row(png, row.data());
    }
  } else {
    std::vector<uint16_t> row(row_elems);
    for (int y = 0; y < img.height(); ++y) {
      size_t i = 0;
      for (int x = 0; x < img.width(); ++x)
        for (int c = 0; c < img.channels(); ++c)
          row[i++] = static_cast<uint16_t>(std::lround(img.at(y, x, c) * maxv));
      png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
    }
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace phymoe
