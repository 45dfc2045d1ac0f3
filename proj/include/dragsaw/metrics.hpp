#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dragsaw/image.hpp"

namespace dragsaw {

/// Per-class confusion counts plus overall pixel accuracy counts.
struct ConfusionCounts {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> tp, fp, fn;
  std::uint64_t correct = 0;
  std::uint64_t total = 0;

  explicit ConfusionCounts(std::size_t classes = 2)
      : num_classes(classes), tp(classes, 0), fp(classes, 0), fn(classes, 0) {}

  /// Throws ConfigError on size mismatch or out-of-range labels.
  void add(const LabelImage& prediction, const LabelImage& truth);
};

struct MetricsReport {
  double ja = 0.0;  // mean over foreground classes
  double di = 0.0;
  double ac = 0.0;  // over all pixels
  std::vector<double> class_ja;  // index 0 (background) included for reference
  std::vector<double> class_di;
  std::size_t samples = 0;
};

/// JA = TP/(TP+FP+FN), DI = 2TP/(2TP+FP+FN). A class that is absent from
/// both prediction and truth scores 1.
MetricsReport metrics_from_counts(const ConfusionCounts& counts, std::size_t samples);

/// Shortest round-trip decimal form, independent of the C locale.
std::string format_real(double v);

}  // namespace dragsaw
