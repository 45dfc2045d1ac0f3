#pragma once

#include <cmath>
#include <random>

#include "dragsaw/tensor.hpp"

namespace dragsaw {

/// Conv weight [Cout,Cin,k,k] drawn from U(-b,b), b = sqrt(6/(fan_in+fan_out)).
inline Tensor glorot_uniform(Shape shape, std::mt19937_64& rng) {
  const std::size_t receptive = shape[2] * shape[3];
  const double fan_in = static_cast<double>(shape[1] * receptive);
  const double fan_out = static_cast<double>(shape[0] * receptive);
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Buffer values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), true);
}

}  // namespace dragsaw
