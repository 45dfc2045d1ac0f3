#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "dragsaw/ops.hpp"
#include "dragsaw/tensor.hpp"

namespace dragsaw {

/// Uncertainty head: 3x3 conv (C->C) -> batchnorm -> ReLU -> 1x1 conv (C->M).
struct UafsHead {
  Tensor conv1_weight;  // [C,C,3,3]
  Tensor conv1_bias;    // [C]
  Tensor bn_gamma;      // [C]
  Tensor bn_beta;       // [C]
  BatchNormState bn_state;
  Tensor conv2_weight;  // [M,C,1,1]
  Tensor conv2_bias;    // [M]

  std::size_t channels() const { return conv1_weight.dim(0); }
  std::size_t num_classes() const { return conv2_weight.dim(0); }
};

/// Builds a head with Glorot-uniform conv1, unit BN, and a zero conv2 so the
/// gate starts as the identity.
UafsHead make_uafs_head(std::size_t channels, std::size_t num_classes, std::mt19937_64& rng);

/// Uncertainty for one image, values in [0,1].
struct UncertaintyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> u;
};

/// A = softmax over classes of the head's logits: [B,C,h,w] -> [B,M,h,w].
Tensor head_forward(const Tensor& features, UafsHead& head, Mode mode);

/// Normalized Shannon entropy over axis 1: [B,M,h,w] -> [B,1,h,w].
/// Requires M >= 2.
Tensor entropy_map(const Tensor& probabilities);

/// Splits a [B,1,h,w] entropy tensor into per-image maps.
std::vector<UncertaintyMap> to_uncertainty_maps(const Tensor& entropy);

/// H * (1 + (1 - U)), with U [B,1,h,w] broadcast over channels.
Tensor select_features(const Tensor& features, const Tensor& uncertainty);

struct GateResult {
  Tensor gated;
  Tensor uncertainty;  // [B,1,h,w]
};

/// Full gate: head, entropy, and feature re-weighting. With `detach` the
/// uncertainty enters the product as a constant.
GateResult uafs_gate(const Tensor& features, UafsHead& head, Mode mode, bool detach = false);

}  // namespace dragsaw
