#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dragsaw/image.hpp"

namespace dragsaw {

/// Raw 8-bit raster as stored in a binary PGM (maxval 255).
struct ByteImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bytes;

  bool operator==(const ByteImage&) const = default;
};

/// round(255 v) with halves rounded up, clamped to [0,255].
std::uint8_t quantize(double v);

ByteImage to_bytes(const GrayImage& image);
ByteImage to_bytes(const LabelImage& mask);
GrayImage gray_from_bytes(const ByteImage& raw);
/// Throws ConfigError if any byte is not below num_classes.
LabelImage labels_from_bytes(const ByteImage& raw, std::size_t num_classes);

std::string encode_pgm(const ByteImage& image);
/// Strict P5 parser. `source` is used in error messages.
ByteImage decode_pgm(const std::string& data, const std::string& source = "<memory>");

void write_pgm(const std::string& path, const ByteImage& image);
ByteImage read_pgm(const std::string& path);

/// Whole-file helpers shared by the IO code.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace dragsaw
