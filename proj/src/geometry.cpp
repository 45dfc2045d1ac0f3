#include "dragsaw/geometry.hpp"

#include <algorithm>
#include <string>

#include "dragsaw/errors.hpp"

namespace dragsaw {

namespace {

void check_layer_index(const ConvStackSpec& spec, std::size_t layer) {
  if (layer > spec.layers.size()) {
    throw ConfigError("layer index " + std::to_string(layer) + " out of range for a stack of depth " +
                      std::to_string(spec.layers.size()));
  }
}

}  // namespace

void ConvStackSpec::validate() const {
  if (image_size.height == 0 || image_size.width == 0) throw ConfigError("conv stack: image size must be positive");
  std::size_t h = image_size.height;
  std::size_t w = image_size.width;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string where = "conv stack layer " + std::to_string(i + 1);
    if (l.kernel < 1 || l.kernel % 2 == 0) throw ConfigError(where + ": kernel must be odd and >= 1");
    if (l.stride < 1) throw ConfigError(where + ": stride must be >= 1");
    if (l.kernel > h + 2 * l.padding || l.kernel > w + 2 * l.padding) {
      throw ConfigError(where + ": output would be empty");
    }
    h = (h + 2 * l.padding - l.kernel) / l.stride + 1;
    w = (w + 2 * l.padding - l.kernel) / l.stride + 1;
  }
}

ImageSize ConvStackSpec::extent_after(std::size_t depth) const {
  check_layer_index(*this, depth);
  ImageSize size = image_size;
  for (std::size_t i = 0; i < depth; ++i) {
    const auto& l = layers[i];
    size.height = (size.height + 2 * l.padding - l.kernel) / l.stride + 1;
    size.width = (size.width + 2 * l.padding - l.kernel) / l.stride + 1;
  }
  return size;
}

std::int64_t rf_size(const ConvStackSpec& spec, std::size_t layer) {
  check_layer_index(spec, layer);
  std::int64_t r = 1;
  std::int64_t product = 1;
  for (std::size_t l = 0; l < layer; ++l) {
    r += (static_cast<std::int64_t>(spec.layers[l].kernel) - 1) * product;
    product *= static_cast<std::int64_t>(spec.layers[l].stride);
  }
  return r;
}

LayerGeometry layer_geometry(const ConvStackSpec& spec, std::size_t layer) {
  check_layer_index(spec, layer);
  LayerGeometry g;
  for (std::size_t l = 0; l < layer; ++l) {
    const auto& spec_l = spec.layers[l];
    const auto k = static_cast<std::int64_t>(spec_l.kernel);
    g.start += ((k - 1) / 2 - static_cast<std::int64_t>(spec_l.padding)) * g.jump;
    g.jump *= static_cast<std::int64_t>(spec_l.stride);
  }
  g.rf = rf_size(spec, layer);
  return g;
}

PatchRect patch_bounds(const LayerGeometry& geom, std::size_t y, std::size_t x, ImageSize image) {
  PatchRect rect;
  rect.center_y = geom.start + static_cast<std::int64_t>(y) * geom.jump;
  rect.center_x = geom.start + static_cast<std::int64_t>(x) * geom.jump;
  const std::int64_t half = (geom.rf - 1) / 2;
  const auto h = static_cast<std::int64_t>(image.height);
  const auto w = static_cast<std::int64_t>(image.width);
  rect.top = std::clamp<std::int64_t>(rect.center_y - half, 0, h);
  rect.bottom = std::clamp<std::int64_t>(rect.center_y - half + geom.rf, 0, h);
  rect.left = std::clamp<std::int64_t>(rect.center_x - half, 0, w);
  rect.right = std::clamp<std::int64_t>(rect.center_x - half + geom.rf, 0, w);
  rect.unclipped_area = geom.rf * geom.rf;
  rect.clipped_area = (rect.bottom - rect.top) * (rect.right - rect.left);
  return rect;
}

}  // namespace dragsaw
