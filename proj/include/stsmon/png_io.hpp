#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "stsmon/image.hpp"

namespace stsmon {

// Decodes any PNG to greyscale on the [0,255] scale. 16-bit samples are
// scaled by 255/65535; colour and palette images are reduced with BT.601
// luma; alpha is discarded.
GreyImage decode_png(std::span<const std::uint8_t> bytes);
GreyImage read_png(const std::filesystem::path& path);

// Values are rounded and clamped to the sample range.
std::vector<std::uint8_t> encode_png_grey8(const GreyImage& img);
std::vector<std::uint8_t> encode_png_grey16(const GreyImage& img);

// 1 bit per pixel, row-major mask; true renders black.
std::vector<std::uint8_t> encode_png_binary(std::size_t rows, std::size_t cols,
                                            const std::vector<std::uint8_t>& black);

}  // namespace stsmon
