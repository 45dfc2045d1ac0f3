// Independent reference computations for the tests. Deliberately naive: plain
// loops over std::vector, no library code beyond the types they compare.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "dragsaw/geometry.hpp"
#include "dragsaw/image.hpp"

namespace oracle {

/// Per-pair loop over anchors i and partners j: -log(exp(s_ij w_ij/tau) / sum_k exp(s_ik (1-w_ik)/tau)).
inline double pdcr_loop(const std::vector<std::vector<double>>& s, const std::vector<std::vector<double>>& w,
                        double tau, bool include_diagonal) {
  const std::size_t n = s.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!include_diagonal && i == j) continue;
      long double denom = 0.0L;
      for (std::size_t k = 0; k < n; ++k) denom += std::exp(static_cast<long double>(s[i][k] * (1.0 - w[i][k]) / tau));
      const long double num = std::exp(static_cast<long double>(s[i][j] * w[i][j] / tau));
      total += static_cast<double>(-std::log(num / denom));
    }
  }
  return total;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Set of input pixels that can influence hidden unit (y, x) after the whole
/// stack, found by pushing a boolean mask back through every layer.
struct Dependency {
  std::vector<std::vector<bool>> input;  // [H][W]
  std::int64_t top = 0, left = 0, bottom = 0, right = 0;  // bounding box, half-open
  bool empty = true;
};

inline Dependency dependency(const std::vector<dragsaw::ConvLayerSpec>& layers, std::size_t h0, std::size_t w0,
                             std::size_t y, std::size_t x) {
  std::vector<std::size_t> hs{h0}, ws{w0};
  for (const auto& l : layers) {
    hs.push_back((hs.back() + 2 * l.padding - l.kernel) / l.stride + 1);
    ws.push_back((ws.back() + 2 * l.padding - l.kernel) / l.stride + 1);
  }
  std::vector<std::vector<bool>> cur(hs.back(), std::vector<bool>(ws.back(), false));
  cur[y][x] = true;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& l = layers[li];
    std::vector<std::vector<bool>> prev(hs[li], std::vector<bool>(ws[li], false));
    for (std::size_t oy = 0; oy < hs[li + 1]; ++oy)
      for (std::size_t ox = 0; ox < ws[li + 1]; ++ox) {
        if (!cur[oy][ox]) continue;
        for (std::size_t ky = 0; ky < l.kernel; ++ky)
          for (std::size_t kx = 0; kx < l.kernel; ++kx) {
            const auto iy = static_cast<std::int64_t>(oy * l.stride + ky) - static_cast<std::int64_t>(l.padding);
            const auto ix = static_cast<std::int64_t>(ox * l.stride + kx) - static_cast<std::int64_t>(l.padding);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::int64_t>(hs[li]) || ix >= static_cast<std::int64_t>(ws[li]))
              continue;
            prev[iy][ix] = true;
          }
      }
    cur = std::move(prev);
  }
  Dependency d;
  d.input = cur;
  d.top = d.left = INT64_MAX;
  d.bottom = d.right = INT64_MIN;
  for (std::size_t iy = 0; iy < h0; ++iy)
    for (std::size_t ix = 0; ix < w0; ++ix)
      if (cur[iy][ix]) {
        d.empty = false;
        d.top = std::min<std::int64_t>(d.top, iy);
        d.left = std::min<std::int64_t>(d.left, ix);
        d.bottom = std::max<std::int64_t>(d.bottom, iy + 1);
        d.right = std::max<std::int64_t>(d.right, ix + 1);
      }
  return d;
}

/// Class shares by scanning the unclipped square around (cy, cx).
inline std::vector<double> ratios(const dragsaw::LabelImage& mask, std::int64_t cy, std::int64_t cx, std::int64_t rf,
                                  std::size_t classes, bool clipped) {
  std::vector<double> counts(classes, 0.0);
  double inside = 0.0;
  const std::int64_t half = (rf - 1) / 2;
  for (std::int64_t y = cy - half; y <= cy + half; ++y)
    for (std::int64_t x = cx - half; x <= cx + half; ++x) {
      if (y < 0 || x < 0 || y >= static_cast<std::int64_t>(mask.height) || x >= static_cast<std::int64_t>(mask.width))
        continue;
      counts[mask.at(y, x)] += 1.0;
      inside += 1.0;
    }
  const double denom = clipped ? inside : static_cast<double>(rf * rf);
  for (auto& c : counts) c = denom > 0 ? c / denom : 0.0;
  return counts;
}

inline double affinity(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t m = 0; m < a.size(); ++m) d += std::fabs(a[m] - b[m]);
  return 1.0 - d / static_cast<double>(a.size());
}

/// Random conv stack: odd kernels up to 5, strides 1..3, padding up to half the kernel.
/// Callers must still validate it.
inline dragsaw::ConvStackSpec random_stack(std::mt19937_64& rng, std::size_t max_depth, std::size_t image) {
  std::uniform_int_distribution<std::size_t> depth(1, max_depth), k(0, 2), s(1, 3);
  dragsaw::ConvStackSpec spec;
  spec.image_size = {image, image};
  const std::size_t n = depth(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t kernel = 2 * k(rng) + 1;
    std::uniform_int_distribution<std::size_t> pad(0, (kernel - 1) / 2);
    spec.layers.push_back({kernel, s(rng), pad(rng)});
  }
  return spec;
}

}  // namespace oracle
