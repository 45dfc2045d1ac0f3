#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "dragsaw/tensor.hpp"

namespace dragsaw {

// Elementwise binary ops. Operands must have equal rank; every axis must
// match or be 1 on one side (broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor div_scalar(const Tensor& x, double divisor);
Tensor add_scalar(const Tensor& x, double offset);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// x·ln(x) with 0·ln 0 := 0. Gradient ln(x)+1, taken as 0 at x == 0.
Tensor xlogx(const Tensor& x);
Tensor relu(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::vector<std::size_t> axes, bool keepdim = false);
Tensor mean(const Tensor& x, std::vector<std::size_t> axes, bool keepdim = false);

/// Euclidean norm along `axis`.
Tensor l2_norm(const Tensor& x, std::size_t axis, bool keepdim = false);
/// Stable log(sum(exp(x))) along `axis`.
Tensor logsumexp(const Tensor& x, std::size_t axis, bool keepdim = false);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation with zero padding. input [B,Cin,H,W], weight
/// [Cout,Cin,k,k], bias [Cout] (may be undefined).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dParams params);

enum class Mode { kTrain, kEval };

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  explicit BatchNormState(std::size_t channels = 0) : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.9;  // weight of the old running statistic
};

/// Per-channel normalization over (B,H,W). Train mode uses biased batch
/// statistics and updates `state`; eval mode reads `state`.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                   BatchNormOptions options = {});

/// Softmax over axis 1 of a [B,C,H,W] tensor.
Tensor channel_softmax(const Tensor& x);
Tensor channel_log_softmax(const Tensor& x);

/// Nearest-neighbour 2x upsampling of a [B,C,H,W] tensor.
Tensor upsample_nearest2x(const Tensor& x);
/// Concatenates [B,Ci,H,W] tensors along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& parts);

struct SpatialCoord {
  std::size_t y = 0;
  std::size_t x = 0;
  bool operator==(const SpatialCoord&) const = default;
};

/// Gathers the channel vectors x[batch,:,y,x] for each coord into an [n,C] tensor.
Tensor gather_spatial(const Tensor& x, std::size_t batch, std::span<const SpatialCoord> coords);

/// Selects item `batch` of axis 0, keeping the axis: [B,...] -> [1,...].
Tensor slice_batch(const Tensor& x, std::size_t batch);

}  // namespace dragsaw
