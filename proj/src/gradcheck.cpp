#include "dragsaw/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dragsaw/errors.hpp"

namespace dragsaw {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double step, double tol) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor loss = f();
  if (loss.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  GradCheckReport report;
  // Rounding in f itself limits what central differences can resolve; below
  // this size a gradient is compared in absolute terms.
  report.noise_floor = kRoundingSlack * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(loss.item())) / step;
  const double floor = std::max(1e-8, report.noise_floor / tol);
  NoGradGuard no_grad;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto values = inputs[ti].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double plus = f().item();
      values[i] = original - step;
      const double minus = f().item();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * step);
      const double ga = analytic[ti][i];
      const double err = std::abs(ga - numeric) / std::max(floor, std::abs(ga) + std::abs(numeric));
      ++report.checked;
      if (report.checked == 1 || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_tensor = ti;
        report.worst_index = i;
        report.worst_analytic = ga;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step, double tol) {
  return grad_check([&f, x]() { return f(x); }, std::vector<Tensor>{x}, step, tol);
}

}  // namespace dragsaw
