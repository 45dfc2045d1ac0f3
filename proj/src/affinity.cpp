#include "dragsaw/affinity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dragsaw/errors.hpp"

namespace dragsaw {

AffinityVariant parse_affinity_variant(std::string_view name) {
  if (name == "continuous") return AffinityVariant::kContinuous;
  if (name == "constant") return AffinityVariant::kConstant;
  if (name == "diagonal") return AffinityVariant::kDiagonal;
  if (name == "bipartite") return AffinityVariant::kBipartite;
  throw ConfigError("unknown affinity variant '" + std::string(name) +
                    "' (expected continuous, constant, diagonal or bipartite)");
}

std::string_view to_string(AffinityVariant variant) {
  switch (variant) {
    case AffinityVariant::kContinuous:
      return "continuous";
    case AffinityVariant::kConstant:
      return "constant";
    case AffinityVariant::kDiagonal:
      return "diagonal";
    case AffinityVariant::kBipartite:
      return "bipartite";
  }
  return "continuous";
}

RatioDenominator parse_ratio_denominator(std::string_view name) {
  if (name == "unclipped") return RatioDenominator::kUnclipped;
  if (name == "clipped") return RatioDenominator::kClipped;
  throw ConfigError("unknown ratio denominator '" + std::string(name) + "' (expected unclipped or clipped)");
}

std::string_view to_string(RatioDenominator denominator) {
  return denominator == RatioDenominator::kUnclipped ? "unclipped" : "clipped";
}

SampleGrid grid_sample_coords(std::size_t height, std::size_t width, std::size_t n) {
  SampleGrid grid;
  if (n == 0 || height == 0 || width == 0) return grid;
  if (height * width <= n) {
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) grid.coords.push_back({y, x});
    return grid;
  }
  auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  while (side * side < n) ++side;
  // A lattice finer than the map would repeat rows or columns.
  const std::size_t rows = std::min(side, height);
  const std::size_t cols = std::min(side, width);
  for (std::size_t i = 0; i < rows && grid.coords.size() < n; ++i) {
    const auto y = static_cast<std::size_t>(std::floor((static_cast<double>(i) + 0.5) * static_cast<double>(height) /
                                                       static_cast<double>(rows)));
    for (std::size_t j = 0; j < cols && grid.coords.size() < n; ++j) {
      const auto x = static_cast<std::size_t>(std::floor((static_cast<double>(j) + 0.5) *
                                                         static_cast<double>(width) / static_cast<double>(cols)));
      grid.coords.push_back({y, x});
    }
  }
  return grid;
}

ClassRatioVector foreground_ratios(const LabelImage& mask, const PatchRect& rect, std::size_t num_classes,
                                   RatioDenominator denominator) {
  ClassRatioVector out{std::vector<double>(num_classes, 0.0)};
  if (rect.clipped_area <= 0) return out;
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto y = rect.top; y < rect.bottom; ++y) {
    for (auto x = rect.left; x < rect.right; ++x) {
      const std::size_t cls = mask.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      if (cls >= num_classes) {
        throw ConfigError("mask label " + std::to_string(cls) + " outside [0," + std::to_string(num_classes) + ")");
      }
      ++counts[cls];
    }
  }
  const double denom = static_cast<double>(denominator == RatioDenominator::kUnclipped ? rect.unclipped_area
                                                                                       : rect.clipped_area);
  for (std::size_t m = 0; m < num_classes; ++m) out.ratios[m] = static_cast<double>(counts[m]) / denom;
  return out;
}

double affinity_score(const ClassRatioVector& a, const ClassRatioVector& b) {
  if (a.ratios.size() != b.ratios.size() || a.ratios.empty()) {
    throw ConfigError("affinity_score: class counts differ (" + std::to_string(a.ratios.size()) + " vs " +
                      std::to_string(b.ratios.size()) + ")");
  }
  double diff = 0.0;
  for (std::size_t m = 0; m < a.ratios.size(); ++m) diff += std::abs(a.ratios[m] - b.ratios[m]);
  return 1.0 - diff / static_cast<double>(a.ratios.size());
}

ClassIntegral::ClassIntegral(const LabelImage& mask, std::size_t num_classes)
    : height_(mask.height), width_(mask.width), num_classes_(num_classes) {
  const std::size_t stride = width_ + 1;
  const std::size_t plane = (height_ + 1) * stride;
  table_.assign(num_classes_ * plane, 0);
  for (std::size_t y = 0; y < height_; ++y) {
    for (std::size_t x = 0; x < width_; ++x) {
      const std::size_t label = mask.at(y, x);
      if (label >= num_classes_) {
        throw ConfigError("mask label " + std::to_string(label) + " outside [0," + std::to_string(num_classes_) + ")");
      }
      for (std::size_t c = 0; c < num_classes_; ++c) {
        std::size_t* t = table_.data() + c * plane;
        t[(y + 1) * stride + x + 1] =
            (label == c ? 1 : 0) + t[y * stride + x + 1] + t[(y + 1) * stride + x] - t[y * stride + x];
      }
    }
  }
}

std::size_t ClassIntegral::count(std::size_t cls, const PatchRect& rect) const {
  if (rect.clipped_area <= 0) return 0;
  const std::size_t stride = width_ + 1;
  const std::size_t* t = table_.data() + cls * (height_ + 1) * stride;
  const auto top = static_cast<std::size_t>(rect.top), bottom = static_cast<std::size_t>(rect.bottom);
  const auto left = static_cast<std::size_t>(rect.left), right = static_cast<std::size_t>(rect.right);
  return t[bottom * stride + right] - t[top * stride + right] - t[bottom * stride + left] + t[top * stride + left];
}

ClassRatioVector ClassIntegral::ratios(const PatchRect& rect, RatioDenominator denominator) const {
  ClassRatioVector out{std::vector<double>(num_classes_, 0.0)};
  if (rect.clipped_area <= 0) return out;
  const double denom = static_cast<double>(denominator == RatioDenominator::kUnclipped ? rect.unclipped_area
                                                                                       : rect.clipped_area);
  for (std::size_t c = 0; c < num_classes_; ++c) out.ratios[c] = static_cast<double>(count(c, rect)) / denom;
  return out;
}

AffinityMatrix affinity_matrix(const LabelImage& mask, std::span<const SpatialCoord> coords,
                               const LayerGeometry& geom, std::size_t num_classes, AffinityOptions options,
                               std::vector<ClassRatioVector>* ratios_out) {
  return affinity_matrix(ClassIntegral(mask, num_classes), mask, coords, geom, options, ratios_out);
}

AffinityMatrix affinity_matrix(const ClassIntegral& integral, const LabelImage& mask,
                               std::span<const SpatialCoord> coords, const LayerGeometry& geom,
                               AffinityOptions options, std::vector<ClassRatioVector>* ratios_out) {
  const std::size_t n = coords.size();
  const ImageSize image{mask.height, mask.width};
  AffinityMatrix out{n, std::vector<double>(n * n, 0.0)};

  std::vector<ClassRatioVector> ratios;
  std::vector<std::uint8_t> center_labels;
  ratios.reserve(n);
  for (const auto& c : coords) {
    const PatchRect rect = patch_bounds(geom, c.y, c.x, image);
    ratios.push_back(integral.ratios(rect, options.denominator));
    const auto cy = std::clamp<std::int64_t>(rect.center_y, 0, static_cast<std::int64_t>(mask.height) - 1);
    const auto cx = std::clamp<std::int64_t>(rect.center_x, 0, static_cast<std::int64_t>(mask.width) - 1);
    center_labels.push_back(mask.at(static_cast<std::size_t>(cy), static_cast<std::size_t>(cx)));
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double w = 0.0;
      switch (options.variant) {
        case AffinityVariant::kContinuous:
          w = i == j ? 1.0 : affinity_score(ratios[i], ratios[j]);
          break;
        case AffinityVariant::kConstant:
          w = 0.5;
          break;
        case AffinityVariant::kDiagonal:
          w = i == j ? 1.0 : 0.0;
          break;
        case AffinityVariant::kBipartite:
          w = center_labels[i] == center_labels[j] ? 1.0 : 0.0;
          break;
      }
      out.w[i * n + j] = w;
      out.w[j * n + i] = w;
    }
  }
  if (ratios_out) *ratios_out = std::move(ratios);
  return out;
}

}  // namespace dragsaw
