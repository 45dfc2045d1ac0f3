#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dragsaw/tensor.hpp"

namespace dragsaw {

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool passed = true;
  std::size_t checked = 0;
  // Location of the worst entry: which tensor, which element.
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double noise_floor = 0.0;  // absolute resolution of the difference quotient
};

/// Multiple of eps |f| / step taken as the rounding noise of a difference quotient.
inline constexpr double kRoundingSlack = 16.0;

/// Compares reverse-mode gradients of the scalar `f()` with respect to each
/// tensor in `inputs` against central differences of the given step.
/// Relative error per entry: |ga - gn| / max(d, |ga| + |gn|), where
/// d = noise_floor / tol, so entries too small for the difference quotient to
/// resolve pass when they agree to within the rounding noise.
/// `inputs` are perturbed in place and restored.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double step, double tol);

/// Single-input convenience form: `f(x)` must return a scalar.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step, double tol);

}  // namespace dragsaw
