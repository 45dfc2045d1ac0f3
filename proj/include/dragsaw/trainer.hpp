#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "dragsaw/metrics.hpp"
#include "dragsaw/network.hpp"
#include "dragsaw/pdcr.hpp"
#include "dragsaw/run_config.hpp"

namespace dragsaw {

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Reads `<dir>/train_manifest.tsv` and `test_manifest.tsv` when cfg.data_dir
/// is set, otherwise generates both splits in memory.
Dataset load_dataset(const RunConfig& cfg);

/// Stacks images into [B,1,H,W].
Tensor images_to_tensor(const std::vector<const Sample*>& batch);

/// Mean over pixels of -log softmax(logits)[true class].
Tensor cross_entropy_loss(const Tensor& logits, const std::vector<const LabelImage*>& masks);

struct LossParts {
  Tensor total;
  double ce = 0.0;
  double pdcr = 0.0;
};

/// CE + lambda * PDCR. The PDCR term is not computed when lambda is 0.
LossParts total_loss(const Tensor& logits, const std::map<int, Tensor>& taps,
                     const std::vector<const LabelImage*>& masks, std::size_t num_classes, const PdcrConfig& cfg,
                     const std::map<int, LayerGeometry>& geometries);

struct SampleMetrics {
  double ja = 0.0;
  double di = 0.0;
  double ac = 0.0;
};

struct Evaluation {
  MetricsReport report;
  std::vector<SampleMetrics> per_sample;
};

/// Eval-mode pass over `samples`. Throws ConfigError when empty.
Evaluation evaluate(SegNet& net, const std::vector<Sample>& samples, std::size_t batch_size);
void write_sample_metrics_csv(const std::string& path, const std::vector<SampleMetrics>& rows);

/// Visiting order of the training subset in a given epoch (1-based).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

struct EpochRow {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_ce = 0.0;
  double train_pdcr = 0.0;
  MetricsReport test;
};

inline constexpr const char* kEpochCsvHeader = "epoch,lr,train_ce,train_pdcr,test_ja,test_di,test_ac";
std::string format_epoch_row(const EpochRow& row);

struct TrainResult {
  std::vector<EpochRow> rows;
  std::size_t best_epoch = 0;
  double best_di = 0.0;
  std::vector<std::size_t> train_indices;  // selected subset, in selection order
};

/// Full training run. With a non-empty out_dir it writes config.txt,
/// metadata.txt, epochs.csv, best.ckpt and final.ckpt there.
TrainResult train(const RunConfig& cfg, const Dataset& data, const std::string& out_dir);

struct SweepRow {
  double fraction = 0.0;
  std::size_t n_train = 0;
  double ja = 0.0;
  double di = 0.0;
  double ac = 0.0;
  double wall_seconds = 0.0;
  bool skipped = false;
};

inline constexpr const char* kSweepCsvHeader = "fraction,n_train,ja,di,ac,wall_seconds";

/// One training run per fraction, in the order given; metrics are the final
/// epoch's test metrics. Runs land in `run_dir/fraction_<f>` when run_dir is set.
std::vector<SweepRow> fraction_sweep(const RunConfig& cfg, const Dataset& data, const std::vector<double>& fractions,
                                     const std::string& out_csv, const std::string& run_dir);

}  // namespace dragsaw
