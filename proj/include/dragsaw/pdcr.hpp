#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dragsaw/affinity.hpp"
#include "dragsaw/geometry.hpp"
#include "dragsaw/image.hpp"
#include "dragsaw/tensor.hpp"

namespace dragsaw {

/// Patch-dragsaw contrastive regularization settings.
struct PdcrConfig {
  double tau = 0.5;
  double lambda = 0.1;
  std::size_t samples = 128;
  std::set<int> tap_blocks{2, 3, 4};
  AffinityVariant variant = AffinityVariant::kContinuous;
  RatioDenominator denominator = RatioDenominator::kUnclipped;
  bool include_diagonal = true;

  void validate() const;
};

/// Feature vectors whose norm is at or below this are dropped from the loss.
inline constexpr double kMinFeatureNorm = 1e-12;

/// Pairwise cosine similarity of the rows of an [n,d] tensor. Every row must
/// have norm above kMinFeatureNorm.
Tensor cosine_similarity_matrix(const Tensor& vectors);

/// Layer loss over all ordered pairs:
///   sum_ij -log( exp(s_ij w_ij / tau) / sum_k exp(s_ik (1 - w_ik) / tau) ).
/// With include_diagonal false the i == j terms are left out of the outer
/// sum; the denominator always runs over every k.
Tensor pdcr_layer_loss(const Tensor& similarity, const AffinityMatrix& affinity, double tau, bool include_diagonal);

/// One row of the optional per-pair audit dump (first image of a batch).
struct PdcrPairRow {
  int layer = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  double s = 0.0;
  double w = 0.0;
  double loss = 0.0;
};

struct PdcrResult {
  Tensor loss;                        // scalar
  std::map<int, double> layer_means;  // per tap, averaged over the batch
  std::size_t excluded = 0;           // zero-norm samples dropped this call
};

/// Batch loss: for each image, the mean over tap layers of the layer loss,
/// then the mean over images. `taps` maps block index to [B,C,h,w] features;
/// `masks` holds one annotation per batch item.
PdcrResult pdcr_total_loss(const std::map<int, Tensor>& taps, const std::vector<const LabelImage*>& masks,
                           std::size_t num_classes, const PdcrConfig& cfg,
                           const std::map<int, LayerGeometry>& geometries,
                           std::vector<PdcrPairRow>* debug_rows = nullptr);

/// Writes the audit rows as `layer,i,j,s_ij,w_ij,l_ij` CSV.
void write_pdcr_debug_csv(const std::string& path, const std::vector<PdcrPairRow>& rows);

}  // namespace dragsaw
