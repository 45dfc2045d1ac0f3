#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace dragsaw {

/// Grayscale image, values in [0,1], row-major.
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

/// Per-pixel class indices, row-major.
struct LabelImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
};

struct Sample {
  GrayImage image;
  LabelImage mask;
};

}  // namespace dragsaw
