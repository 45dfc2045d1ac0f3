#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "dragsaw/geometry.hpp"
#include "dragsaw/image.hpp"
#include "dragsaw/ops.hpp"

namespace dragsaw {

enum class AffinityVariant { kContinuous, kConstant, kDiagonal, kBipartite };
enum class RatioDenominator { kUnclipped, kClipped };

AffinityVariant parse_affinity_variant(std::string_view name);
std::string_view to_string(AffinityVariant variant);
RatioDenominator parse_ratio_denominator(std::string_view name);
std::string_view to_string(RatioDenominator denominator);

/// Per-class share of a receptive-field patch; class 0 is background.
struct ClassRatioVector {
  std::vector<double> ratios;
};

/// Symmetric n x n pair weights in [0,1], row-major.
struct AffinityMatrix {
  std::size_t n = 0;
  std::vector<double> w;

  double at(std::size_t i, std::size_t j) const { return w[i * n + j]; }
};

struct SampleGrid {
  std::vector<SpatialCoord> coords;
};

/// Deterministic lattice of up to `n` hidden coordinates, row-major.
SampleGrid grid_sample_coords(std::size_t height, std::size_t width, std::size_t n);

/// Class shares inside `rect`. Unclipped divides by rf^2 even for border
/// patches; clipped divides by the in-image area. An empty rect yields zeros.
ClassRatioVector foreground_ratios(const LabelImage& mask, const PatchRect& rect, std::size_t num_classes,
                                   RatioDenominator denominator);

/// 1 - mean absolute difference of the class shares.
double affinity_score(const ClassRatioVector& a, const ClassRatioVector& b);

/// Per-class summed-area tables for O(1) patch counts.
class ClassIntegral {
 public:
  ClassIntegral(const LabelImage& mask, std::size_t num_classes);

  std::size_t count(std::size_t cls, const PatchRect& rect) const;
  ClassRatioVector ratios(const PatchRect& rect, RatioDenominator denominator) const;
  std::size_t num_classes() const { return num_classes_; }

 private:
  std::size_t height_;
  std::size_t width_;
  std::size_t num_classes_;
  std::vector<std::size_t> table_;  // [class][(H+1)*(W+1)]
};

struct AffinityOptions {
  AffinityVariant variant = AffinityVariant::kContinuous;
  RatioDenominator denominator = RatioDenominator::kUnclipped;
};

/// Pair weights for the grid's hidden units. `ratios_out`, when given,
/// receives each unit's class shares.
AffinityMatrix affinity_matrix(const LabelImage& mask, std::span<const SpatialCoord> coords,
                               const LayerGeometry& geom, std::size_t num_classes, AffinityOptions options,
                               std::vector<ClassRatioVector>* ratios_out = nullptr);

AffinityMatrix affinity_matrix(const ClassIntegral& integral, const LabelImage& mask,
                               std::span<const SpatialCoord> coords, const LayerGeometry& geom,
                               AffinityOptions options, std::vector<ClassRatioVector>* ratios_out = nullptr);

}  // namespace dragsaw
