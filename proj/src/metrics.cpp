#include "dragsaw/metrics.hpp"

#include <charconv>

#include "dragsaw/errors.hpp"

namespace dragsaw {

void ConfusionCounts::add(const LabelImage& prediction, const LabelImage& truth) {
  if (prediction.height != truth.height || prediction.width != truth.width ||
      prediction.labels.size() != truth.labels.size()) {
    throw ConfigError("prediction and truth sizes differ");
  }
  for (std::size_t i = 0; i < truth.labels.size(); ++i) {
    const std::size_t p = prediction.labels[i], t = truth.labels[i];
    if (p >= num_classes || t >= num_classes) throw ConfigError("label outside [0, num_classes)");
    if (p == t) {
      ++tp[t];
      ++correct;
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  total += truth.labels.size();
}

MetricsReport metrics_from_counts(const ConfusionCounts& counts, std::size_t samples) {
  MetricsReport r;
  r.samples = samples;
  for (std::size_t c = 0; c < counts.num_classes; ++c) {
    const auto tp = static_cast<double>(counts.tp[c]);
    const auto err = static_cast<double>(counts.fp[c] + counts.fn[c]);
    if (tp + err == 0.0) {
      r.class_ja.push_back(1.0);
      r.class_di.push_back(1.0);
    } else {
      r.class_ja.push_back(tp / (tp + err));
      r.class_di.push_back(2.0 * tp / (2.0 * tp + err));
    }
  }
  const std::size_t foreground = counts.num_classes - 1;
  for (std::size_t c = 1; c < counts.num_classes; ++c) {
    r.ja += r.class_ja[c];
    r.di += r.class_di[c];
  }
  if (foreground > 0) {
    r.ja /= static_cast<double>(foreground);
    r.di /= static_cast<double>(foreground);
  }
  r.ac = counts.total == 0 ? 0.0 : static_cast<double>(counts.correct) / static_cast<double>(counts.total);
  return r;
}

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace dragsaw
