#include "dragsaw/optim.hpp"

#include <cmath>
#include <numbers>

#include "dragsaw/errors.hpp"

namespace dragsaw {

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    auto data = p.mutable_data();
    const bool has_grad = p.has_grad();
    const double* g = has_grad ? p.grad().data() : nullptr;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] -= lr * options_.weight_decay * data[i];
      const double gi = has_grad ? g[i] : 0.0;
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double cosine_lr(std::size_t t, std::size_t total, double lr0) {
  if (total == 0) return lr0;
  if (t > total) throw ContractError("cosine_lr: step beyond schedule");
  return lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(total))) / 2.0;
}

}  // namespace dragsaw
