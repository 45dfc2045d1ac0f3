#pragma once

#include <cstddef>
#include <vector>

#include "dragsaw/tensor.hpp"

namespace dragsaw {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // decoupled
};

/// Adam with bias correction. Each step first shrinks p by lr*wd*p, then
/// applies the Adam update. A parameter without a gradient counts as g = 0.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  void step(double lr);
  void zero_grad();
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<Buffer> m_, v_;
  std::size_t t_ = 0;
};

/// lr0 (1 + cos(pi t / T)) / 2; T = 0 gives lr0.
double cosine_lr(std::size_t t, std::size_t total, double lr0);

}  // namespace dragsaw
