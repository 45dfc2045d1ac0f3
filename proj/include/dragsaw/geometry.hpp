#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace dragsaw {

struct ConvLayerSpec {
  std::size_t kernel = 3;  // odd
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct ImageSize {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const ImageSize&) const = default;
};

/// An ordered stack of convolutions on an image of a given size. Only
/// strided, undilated, odd-kernel convolutions are modelled.
struct ConvStackSpec {
  std::vector<ConvLayerSpec> layers;
  ImageSize image_size;

  /// Throws ConfigError on even kernels, zero strides, or a layer whose
  /// output would be empty.
  void validate() const;
  /// Spatial extent after `depth` layers (depth 0 is the image itself).
  ImageSize extent_after(std::size_t depth) const;
};

/// Receptive-field description of one layer in input-pixel units.
struct LayerGeometry {
  std::int64_t rf = 1;    // receptive-field side length
  std::int64_t jump = 1;  // input pixels per hidden step
  std::int64_t start = 0; // input coordinate of hidden unit (0,0)'s centre
};

/// Half-open pixel rectangle of a receptive field, clipped to the image.
struct PatchRect {
  std::int64_t top = 0;
  std::int64_t left = 0;
  std::int64_t bottom = 0;
  std::int64_t right = 0;
  std::int64_t unclipped_area = 0;
  std::int64_t clipped_area = 0;
  // Unclipped centre pixel; may lie outside the image.
  std::int64_t center_y = 0;
  std::int64_t center_x = 0;
};

/// Receptive-field side length after `layer` layers (0 gives 1).
std::int64_t rf_size(const ConvStackSpec& spec, std::size_t layer);

LayerGeometry layer_geometry(const ConvStackSpec& spec, std::size_t layer);

/// Input-space patch of hidden unit (y, x).
PatchRect patch_bounds(const LayerGeometry& geom, std::size_t y, std::size_t x, ImageSize image);

}  // namespace dragsaw
