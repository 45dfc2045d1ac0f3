#include "dragsaw/uafs.hpp"

#include <cmath>

#include "dragsaw/errors.hpp"
#include "dragsaw/init.hpp"

namespace dragsaw {

UafsHead make_uafs_head(std::size_t channels, std::size_t num_classes, std::mt19937_64& rng) {
  UafsHead head;
  head.conv1_weight = glorot_uniform({channels, channels, 3, 3}, rng);
  head.conv1_bias = Tensor::zeros({channels}, true);
  head.bn_gamma = Tensor::full({channels}, 1.0, true);
  head.bn_beta = Tensor::zeros({channels}, true);
  head.bn_state = BatchNormState(channels);
  head.conv2_weight = Tensor::zeros({num_classes, channels, 1, 1}, true);
  head.conv2_bias = Tensor::zeros({num_classes}, true);
  return head;
}

Tensor head_forward(const Tensor& features, UafsHead& head, Mode mode) {
  if (features.rank() != 4 || features.dim(1) != head.channels()) {
    throw ConfigError("uafs head expects " + std::to_string(head.channels()) + " channels, got " +
                      shape_str(features.shape()));
  }
  Tensor h = conv2d(features, head.conv1_weight, head.conv1_bias, {1, 1});
  h = relu(batchnorm2d(h, head.bn_gamma, head.bn_beta, head.bn_state, mode));
  return channel_softmax(conv2d(h, head.conv2_weight, head.conv2_bias, {1, 0}));
}

Tensor entropy_map(const Tensor& probabilities) {
  if (probabilities.rank() != 4) throw ConfigError("entropy_map expects [B,M,h,w]");
  const std::size_t classes = probabilities.dim(1);
  if (classes < 2) throw ConfigError("entropy_map: normalized entropy needs at least 2 classes");
  // -sum a ln a / ln M equals the base-2 form.
  return div_scalar(neg(sum(xlogx(probabilities), {1}, /*keepdim=*/true)), std::log(static_cast<double>(classes)));
}

std::vector<UncertaintyMap> to_uncertainty_maps(const Tensor& entropy) {
  if (entropy.rank() != 4 || entropy.dim(1) != 1) throw ConfigError("expected [B,1,h,w] uncertainty");
  const std::size_t h = entropy.dim(2), w = entropy.dim(3);
  std::vector<UncertaintyMap> maps;
  const auto v = entropy.data();
  for (std::size_t b = 0; b < entropy.dim(0); ++b) {
    UncertaintyMap m{h, w, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(b * h * w),
                                               v.begin() + static_cast<std::ptrdiff_t>((b + 1) * h * w))};
    maps.push_back(std::move(m));
  }
  return maps;
}

Tensor select_features(const Tensor& features, const Tensor& uncertainty) {
  if (features.rank() != 4 || uncertainty.rank() != 4 || uncertainty.dim(1) != 1 ||
      features.dim(0) != uncertainty.dim(0) || features.dim(2) != uncertainty.dim(2) ||
      features.dim(3) != uncertainty.dim(3)) {
    throw ConfigError("select_features: uncertainty " + shape_str(uncertainty.shape()) + " does not match features " +
                      shape_str(features.shape()));
  }
  const Tensor certainty = add_scalar(neg(uncertainty), 1.0);  // 1 - U
  return mul(features, add_scalar(certainty, 1.0));
}

GateResult uafs_gate(const Tensor& features, UafsHead& head, Mode mode, bool detach) {
  Tensor u = entropy_map(head_forward(features, head, mode));
  Tensor gated = select_features(features, detach ? u.detach() : u);
  return {std::move(gated), std::move(u)};
}

}  // namespace dragsaw
