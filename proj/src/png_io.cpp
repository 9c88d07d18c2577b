#include "stsmon/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <string>

#include "stsmon/error.hpp"
#include "stsmon/file_io.hpp"

namespace stsmon {
namespace {

struct ReadCursor {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->data.size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, cur->data.data() + cur->pos, len);
  cur->pos += len;
}

void write_to_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void flush_noop(png_structp) {}

[[noreturn]] void on_png_error(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

// Wraps the setjmp-based libpng error protocol; rows are filled by the
// caller-provided callback after all transforms are configured.
std::vector<std::uint8_t> encode(std::size_t rows, std::size_t cols, int bit_depth,
                                 const std::vector<std::vector<std::uint8_t>>& packed) {
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err,
                                            on_png_error, on_png_warning);
  if (!png) fail(ErrorCode::IoError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::IoError, "PNG encode failed: " + err);
  }
  png_set_write_fn(png, &out, write_to_vector, flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows),
               bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (const auto& row : packed) png_write_row(png, row.data());
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace

GreyImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    fail(ErrorCode::FormatError, "not a PNG file");
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err,
                                           on_png_error, on_png_warning);
  if (!png) fail(ErrorCode::IoError, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{bytes, 0};
  std::vector<std::uint8_t> raw;
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::FormatError, "PNG decode failed: " + err);
  }
  png_set_read_fn(png, &cursor, read_from_memory);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  const std::size_t rows = png_get_image_height(png, info);
  const std::size_t cols = png_get_image_width(png, info);
  const int channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  raw.resize(rows * stride);
  row_ptrs.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) row_ptrs[r] = raw.data() + r * stride;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const int bytes_per_sample = out_depth == 16 ? 2 : 1;
  const double scale = out_depth == 16 ? 255.0 / 65535.0 : 1.0;
  GreyImage img(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* p = raw.data() + r * stride;
    for (std::size_t c = 0; c < cols; ++c) {
      double s[3] = {0, 0, 0};
      for (int ch = 0; ch < channels; ++ch) {
        const std::uint8_t* q = p + (c * channels + ch) * bytes_per_sample;
        s[ch] = bytes_per_sample == 2 ? double((q[0] << 8) | q[1]) : double(q[0]);
      }
      const double v = channels >= 3 ? 0.299 * s[0] + 0.587 * s[1] + 0.114 * s[2] : s[0];
      img(r, c) = v * scale;
    }
  }
  return img;
}

GreyImage read_png(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_png(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png_grey8(const GreyImage& img) {
  std::vector<std::vector<std::uint8_t>> rows(img.rows(), std::vector<std::uint8_t>(img.cols()));
  for (std::size_t r = 0; r < img.rows(); ++r) {
    for (std::size_t c = 0; c < img.cols(); ++c) {
      rows[r][c] = static_cast<std::uint8_t>(std::clamp(std::lround(img(r, c)), 0L, 255L));
    }
  }
  return encode(img.rows(), img.cols(), 8, rows);
}

std::vector<std::uint8_t> encode_png_grey16(const GreyImage& img) {
  std::vector<std::vector<std::uint8_t>> rows(img.rows(),
                                              std::vector<std::uint8_t>(2 * img.cols()));
  for (std::size_t r = 0; r < img.rows(); ++r) {
    for (std::size_t c = 0; c < img.cols(); ++c) {
      const long v = std::clamp(std::lround(img(r, c) * 65535.0 / 255.0), 0L, 65535L);
      rows[r][2 * c] = static_cast<std::uint8_t>(v >> 8);
      rows[r][2 * c + 1] = static_cast<std::uint8_t>(v & 0xff);
    }
  }
  return encode(img.rows(), img.cols(), 16, rows);
}

std::vector<std::uint8_t> encode_png_binary(std::size_t rows, std::size_t cols,
                                            const std::vector<std::uint8_t>& black) {
  if (black.size() != rows * cols) {
    fail(ErrorCode::DimensionMismatch, "binary mask size does not match dimensions");
  }
  std::vector<std::vector<std::uint8_t>> packed(rows, std::vector<std::uint8_t>((cols + 7) / 8));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      // Greyscale bit 1 is white.
      if (!black[r * cols + c]) packed[r][c / 8] |= static_cast<std::uint8_t>(0x80 >> (c % 8));
    }
  }
  return encode(rows, cols, 1, packed);
}

}  // namespace stsmon
