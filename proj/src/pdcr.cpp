#include "dragsaw/pdcr.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "dragsaw/errors.hpp"
#include "dragsaw/ops.hpp"

namespace dragsaw {

void PdcrConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("pdcr.tau must be > 0");
  if (!(lambda >= 0.0)) throw ConfigError("pdcr.lambda must be >= 0");
  if (samples < 1) throw ConfigError("pdcr.n must be >= 1");
}

Tensor cosine_similarity_matrix(const Tensor& vectors) {
  if (vectors.rank() != 2) throw ConfigError("cosine_similarity_matrix: expected [n,d], got " + shape_str(vectors.shape()));
  Tensor norms = l2_norm(vectors, 1, /*keepdim=*/true);
  for (double n : norms.data()) {
    if (!(n > kMinFeatureNorm)) throw ContractError("cosine_similarity_matrix: zero-norm feature vector");
  }
  Tensor unit = div(vectors, norms);
  return matmul(unit, transpose(unit));
}

Tensor pdcr_layer_loss(const Tensor& similarity, const AffinityMatrix& affinity, double tau, bool include_diagonal) {
  if (!(tau > 0.0)) throw ConfigError("pdcr: tau must be > 0");
  if (similarity.rank() != 2 || similarity.dim(0) != similarity.dim(1)) {
    throw ConfigError("pdcr: similarity must be square, got " + shape_str(similarity.shape()));
  }
  const std::size_t n = similarity.dim(0);
  if (affinity.n != n) {
    throw ConfigError("pdcr: affinity is " + std::to_string(affinity.n) + "x" + std::to_string(affinity.n) +
                      " but similarity is " + std::to_string(n) + "x" + std::to_string(n));
  }
  if (n == 0) return Tensor::scalar(0.0);

  Buffer w(affinity.w.begin(), affinity.w.end());
  Buffer wbar(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) wbar[i] = 1.0 - w[i];
  const Tensor pull = div_scalar(mul(similarity, Tensor::from({n, n}, std::move(w))), tau);
  const Tensor push = div_scalar(mul(similarity, Tensor::from({n, n}, std::move(wbar))), tau);
  const Tensor log_denominator = logsumexp(push, 1);  // [n], one per anchor i

  if (include_diagonal) {
    return sub(scale(sum(log_denominator), static_cast<double>(n)), sum(pull));
  }
  Buffer off_diagonal(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i) off_diagonal[i * n + i] = 0.0;
  return sub(scale(sum(log_denominator), static_cast<double>(n - 1)),
             sum(mul(pull, Tensor::from({n, n}, std::move(off_diagonal)))));
}

namespace {

void append_debug_rows(int layer, const Tensor& similarity, const AffinityMatrix& affinity, double tau,
                       bool include_diagonal, std::vector<PdcrPairRow>& rows) {
  const std::size_t n = affinity.n;
  const auto s = similarity.data();
  for (std::size_t i = 0; i < n; ++i) {
    double m = -INFINITY;
    for (std::size_t k = 0; k < n; ++k) m = std::max(m, s[i * n + k] * (1.0 - affinity.at(i, k)) / tau);
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += std::exp(s[i * n + k] * (1.0 - affinity.at(i, k)) / tau - m);
    const double lse = m + std::log(acc);
    for (std::size_t j = 0; j < n; ++j) {
      if (!include_diagonal && i == j) continue;
      rows.push_back({layer, i, j, s[i * n + j], affinity.at(i, j), lse - s[i * n + j] * affinity.at(i, j) / tau});
    }
  }
}

}  // namespace

PdcrResult pdcr_total_loss(const std::map<int, Tensor>& taps, const std::vector<const LabelImage*>& masks,
                           std::size_t num_classes, const PdcrConfig& cfg,
                           const std::map<int, LayerGeometry>& geometries, std::vector<PdcrPairRow>* debug_rows) {
  cfg.validate();
  PdcrResult result;
  result.loss = Tensor::scalar(0.0);
  if (cfg.tap_blocks.empty() || masks.empty()) return result;

  for (int block : cfg.tap_blocks) {
    auto tap = taps.find(block);
    if (tap == taps.end()) throw ConfigError("pdcr: tap block " + std::to_string(block) + " is not produced by the network");
    if (tap->second.rank() != 4 || tap->second.dim(0) != masks.size()) {
      throw ConfigError("pdcr: tap block " + std::to_string(block) + " has shape " + shape_str(tap->second.shape()) +
                        " for " + std::to_string(masks.size()) + " masks");
    }
    if (!geometries.contains(block)) throw ConfigError("pdcr: no geometry for tap block " + std::to_string(block));
    result.layer_means[block] = 0.0;
  }

  const AffinityOptions options{cfg.variant, cfg.denominator};
  const double num_layers = static_cast<double>(cfg.tap_blocks.size());
  const double num_images = static_cast<double>(masks.size());
  Tensor batch_total;
  for (std::size_t b = 0; b < masks.size(); ++b) {
    const LabelImage& mask = *masks[b];
    const ClassIntegral integral(mask, num_classes);
    Tensor image_total;
    for (int block : cfg.tap_blocks) {
      const Tensor& features = taps.at(block);
      const std::size_t channels = features.dim(1), h = features.dim(2), w = features.dim(3);
      const SampleGrid grid = grid_sample_coords(h, w, cfg.samples);

      std::vector<SpatialCoord> kept;
      const auto fv = features.data();
      for (const auto& c : grid.coords) {
        double sq = 0.0;
        for (std::size_t ch = 0; ch < channels; ++ch) {
          const double v = fv[((b * channels + ch) * h + c.y) * w + c.x];
          sq += v * v;
        }
        if (std::sqrt(sq) > kMinFeatureNorm) {
          kept.push_back(c);
        } else {
          ++result.excluded;
        }
      }

      Tensor layer_loss = Tensor::scalar(0.0);
      if (!kept.empty()) {
        const Tensor similarity = cosine_similarity_matrix(gather_spatial(features, b, kept));
        const AffinityMatrix affinity = affinity_matrix(integral, mask, kept, geometries.at(block), options);
        layer_loss = pdcr_layer_loss(similarity, affinity, cfg.tau, cfg.include_diagonal);
        if (debug_rows && b == 0) {
          append_debug_rows(block, similarity, affinity, cfg.tau, cfg.include_diagonal, *debug_rows);
        }
      }
      result.layer_means[block] += layer_loss.item() / num_images;
      image_total = image_total.defined() ? add(image_total, layer_loss) : layer_loss;
    }
    const Tensor image_loss = div_scalar(image_total, num_layers);
    batch_total = batch_total.defined() ? add(batch_total, image_loss) : image_loss;
  }
  result.loss = div_scalar(batch_total, num_images);
  return result;
}

void write_pdcr_debug_csv(const std::string& path, const std::vector<PdcrPairRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "layer,i,j,s_ij,w_ij,l_ij\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.layer << ',' << r.i << ',' << r.j << ',' << r.s << ',' << r.w << ',' << r.loss << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace dragsaw
