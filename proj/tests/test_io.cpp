#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "stsmon/error.hpp"
#include "stsmon/file_io.hpp"
#include "stsmon/png_io.hpp"
#include "support.hpp"

using namespace stsmon;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const fs::path d = fs::temp_directory_path() / "stsmon_test_io";
  fs::create_directories(d);
  return d;
}

GreyImage ramp(std::size_t rows, std::size_t cols) {
  GreyImage img(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) img(r, c) = static_cast<double>((r * 7 + c * 3) % 256);
  }
  return img;
}

}  // namespace

TEST_CASE("8-bit PNG round trip is exact for integer levels") {
  const GreyImage img = ramp(17, 23);
  const GreyImage back = decode_png(encode_png_grey8(img));
  CHECK(back == img);
}

TEST_CASE("16-bit PNG keeps sub-level precision") {
  GreyImage img(5, 6);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels()[i] = 255.0 * i / (img.size() - 1);
  const GreyImage back = decode_png(encode_png_grey16(img));
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back.pixels()[i] - img.pixels()[i]) <= 255.0 / 65535);
}

TEST_CASE("binary PNG renders the mask black") {
  std::vector<std::uint8_t> mask(9 * 10, 0);
  mask[0] = mask[15] = mask[89] = 1;
  const GreyImage back = decode_png(encode_png_binary(9, 10, mask));
  for (std::size_t i = 0; i < mask.size(); ++i) CHECK(back.pixels()[i] == (mask[i] ? 0.0 : 255.0));
}

TEST_CASE("PNG encoding is deterministic") {
  const GreyImage img = ramp(30, 30);
  CHECK(encode_png_grey8(img) == encode_png_grey8(img));
}

TEST_CASE("bad PNG input") {
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5, 6, 7, 8, 9};
  try {
    decode_png(junk);
    FAIL("expected FormatError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FormatError);
  }
  try {
    read_png(scratch_dir() / "missing.png");
    FAIL("expected IoError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IoError);
  }
}

TEST_CASE("atomic write leaves only the final file") {
  const fs::path dir = scratch_dir() / "atomic";
  fs::remove_all(dir);
  write_file_atomic(dir / "sub" / "a.txt", "hello");
  const auto bytes = read_file(dir / "sub" / "a.txt");
  CHECK(std::string(bytes.begin(), bytes.end()) == "hello");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "sub")) ++entries;
  CHECK(entries == 1);
  write_file_atomic(dir / "sub" / "a.txt", "bye");
  CHECK(read_file(dir / "sub" / "a.txt").size() == 3);
}

TEST_CASE("byte reader and writer") {
  ByteWriter w;
  w.u8(7);
  w.u32(0xdeadbeef);
  w.u64(1ULL << 40);
  w.f64(-2.5);
  w.text("ok");
  const auto bytes = w.take();
  CHECK(bytes.size() == 1 + 4 + 8 + 8 + 2);
  CHECK(bytes[1] == 0xef);  // little-endian
  ByteReader r(bytes);
  CHECK(r.u8() == 7);
  CHECK(r.u32() == 0xdeadbeef);
  CHECK(r.u64() == (1ULL << 40));
  CHECK(r.f64() == -2.5);
  CHECK(r.remaining() == 2);
  r.bytes(2);
  CHECK_THROWS_AS(r.u8(), Error);
}

TEST_CASE("FNV-1a reference values") {
  const std::string a = "a";
  CHECK(fnv1a64({}) == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(a.data()), 1)) == 0xaf63dc4c8601ec8cULL);
}
