#include "dragsaw/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>

#include "dragsaw/checkpoint.hpp"
#include "dragsaw/errors.hpp"
#include "dragsaw/optim.hpp"
#include "dragsaw/pgm.hpp"
#include "dragsaw/random.hpp"

namespace dragsaw {

namespace fs = std::filesystem;

Dataset load_dataset(const RunConfig& cfg) {
  Dataset data;
  if (!cfg.data_dir.empty()) {
    const auto dir = fs::path(cfg.data_dir);
    data.train = load_samples(read_manifest((dir / manifest_filename(Split::kTrain)).string(), Split::kTrain),
                              cfg.data.num_classes);
    data.test = load_samples(read_manifest((dir / manifest_filename(Split::kTest)).string(), Split::kTest),
                             cfg.data.num_classes);
  } else {
    data.train = generate_samples(cfg.data, Split::kTrain);
    SyntheticConfig test_cfg = cfg.data;
    test_cfg.count = cfg.test_count;
    data.test = generate_samples(test_cfg, Split::kTest);
  }
  return data;
}

Tensor images_to_tensor(const std::vector<const Sample*>& batch) {
  if (batch.empty()) throw ContractError("images_to_tensor: empty batch");
  const std::size_t h = batch[0]->image.height, w = batch[0]->image.width;
  Buffer values;
  values.reserve(batch.size() * h * w);
  for (const Sample* s : batch) {
    if (s->image.height != h || s->image.width != w) throw ConfigError("batch images differ in size");
    values.insert(values.end(), s->image.pixels.begin(), s->image.pixels.end());
  }
  return Tensor::from({batch.size(), 1, h, w}, std::move(values));
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<const LabelImage*>& masks) {
  if (logits.rank() != 4 || logits.dim(0) != masks.size()) {
    throw ConfigError("cross_entropy_loss: logits " + shape_str(logits.shape()) + " do not match " +
                      std::to_string(masks.size()) + " masks");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const std::size_t plane = h * w;
  Buffer onehot(logits.numel(), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const LabelImage& m = *masks[b];
    if (m.height != h || m.width != w) throw ConfigError("cross_entropy_loss: mask size mismatch");
    for (std::size_t i = 0; i < plane; ++i) {
      if (m.labels[i] >= classes) throw ConfigError("cross_entropy_loss: label outside [0,M)");
      onehot[(b * classes + m.labels[i]) * plane + i] = 1.0;
    }
  }
  const Tensor picked = sum(mul(channel_log_softmax(logits), Tensor::from(logits.shape(), std::move(onehot))));
  return scale(picked, -1.0 / static_cast<double>(batch * plane));
}

LossParts total_loss(const Tensor& logits, const std::map<int, Tensor>& taps,
                     const std::vector<const LabelImage*>& masks, std::size_t num_classes, const PdcrConfig& cfg,
                     const std::map<int, LayerGeometry>& geometries) {
  LossParts parts;
  const Tensor ce = cross_entropy_loss(logits, masks);
  parts.ce = ce.item();
  if (cfg.lambda == 0.0 || cfg.tap_blocks.empty()) {
    parts.total = ce;
    return parts;
  }
  const PdcrResult pdcr = pdcr_total_loss(taps, masks, num_classes, cfg, geometries);
  parts.pdcr = pdcr.loss.item();
  parts.total = add(ce, scale(pdcr.loss, cfg.lambda));
  return parts;
}

Evaluation evaluate(SegNet& net, const std::vector<Sample>& samples, std::size_t batch_size) {
  if (samples.empty()) throw ConfigError("evaluate: no samples");
  if (batch_size == 0) throw ConfigError("evaluate: batch size must be >= 1");
  NoGradGuard no_grad;
  const std::size_t classes = net.config().num_classes;
  ConfusionCounts total(classes);
  Evaluation out;
  ForwardOptions options;
  options.taps = std::set<int>{};
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<const Sample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
    const auto predictions = predict_mask(net.forward(images_to_tensor(batch), Mode::kEval, options).logits);
    for (std::size_t k = 0; k < batch.size(); ++k) {
      total.add(predictions[k], batch[k]->mask);
      ConfusionCounts one(classes);
      one.add(predictions[k], batch[k]->mask);
      const auto r = metrics_from_counts(one, 1);
      out.per_sample.push_back({r.ja, r.di, r.ac});
    }
  }
  out.report = metrics_from_counts(total, samples.size());
  return out;
}

void write_sample_metrics_csv(const std::string& path, const std::vector<SampleMetrics>& rows) {
  std::string text = "sample,ja,di,ac\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    text += std::to_string(i) + "," + format_real(rows[i].ja) + "," + format_real(rows[i].di) + "," +
            format_real(rows[i].ac) + "\n";
  }
  write_file(path, text);
}

std::string format_epoch_row(const EpochRow& r) {
  return std::to_string(r.epoch) + "," + format_real(r.lr) + "," + format_real(r.train_ce) + "," +
         format_real(r.train_pdcr) + "," + format_real(r.test.ja) + "," + format_real(r.test.di) + "," +
         format_real(r.test.ac);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(seed, {0x73687566, epoch}));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

TrainResult train(const RunConfig& cfg, const Dataset& data, const std::string& out_dir) {
  cfg.validate();
  if (data.test.empty()) throw ConfigError("train: test set is empty");
  TrainResult result;
  result.train_indices = fraction_indices(data.train.size(), cfg.fraction, cfg.seed);
  std::vector<const Sample*> train_set;
  for (auto i : result.train_indices) train_set.push_back(&data.train[i]);

  SegNet net(cfg.network_config());
  Adam optimizer(net.parameters(), cfg.adam);
  const auto& geometries = net.tap_geometries();
  const std::size_t num_classes = cfg.data.num_classes;
  const bool with_pdcr = cfg.pdcr_enabled();
  ForwardOptions forward_options;
  if (!with_pdcr) forward_options.taps = std::set<int>{};

  const bool write = !out_dir.empty();
  std::string csv = std::string(kEpochCsvHeader) + "\n";
  if (write) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
    write_file((fs::path(out_dir) / "config.txt").string(), cfg.serialize());
    write_file((fs::path(out_dir) / "metadata.txt").string(),
               "configuration = " + cfg.label() + "\nparameters = " + std::to_string(net.parameter_count()) +
                   "\ntrain_samples = " + std::to_string(train_set.size()) +
                   "\ntest_samples = " + std::to_string(data.test.size()) + "\n");
    std::string indices;
    for (auto i : result.train_indices) indices += std::to_string(i) + "\n";
    write_file((fs::path(out_dir) / "train_indices.txt").string(), indices);
  }
  auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };

  if (cfg.epochs == 0) {
    EpochRow row{0, cfg.lr, 0.0, 0.0, evaluate(net, data.test, cfg.batch_size).report};
    result.rows.push_back(row);
    result.best_di = row.test.di;
    csv += format_epoch_row(row) + "\n";
    if (write) {
      write_file(path("epochs.csv"), csv);
      write_checkpoint(path("best.ckpt"), net.state());
      write_checkpoint(path("final.ckpt"), net.state());
    }
    return result;
  }

  const std::size_t steps_per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  std::size_t step = 0;
  double best_di = -1.0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(train_set.size(), cfg.seed, epoch);
    EpochRow row;
    row.epoch = epoch;
    row.lr = cosine_lr(step, total_steps, cfg.lr);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Sample*> batch;
      std::vector<const LabelImage*> masks;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(train_set[order[k]]);
        masks.push_back(&train_set[order[k]]->mask);
      }
      const double lr = cosine_lr(step, total_steps, cfg.lr);
      optimizer.zero_grad();
      auto out = net.forward(images_to_tensor(batch), Mode::kTrain, forward_options);
      const LossParts loss = total_loss(out.logits, out.taps, masks, num_classes, cfg.pdcr, geometries);
      if (!std::isfinite(loss.total.item())) {
        if (write) write_checkpoint(path("nonfinite.ckpt"), net.state());
        throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                             " (ce " + format_real(loss.ce) + ", pdcr " + format_real(loss.pdcr) + ")" +
                             (write ? "; state written to " + path("nonfinite.ckpt") : std::string()));
      }
      loss.total.backward();
      optimizer.step(lr);
      row.train_ce += loss.ce;
      row.train_pdcr += loss.pdcr;
      ++step;
    }
    row.train_ce /= static_cast<double>(steps_per_epoch);
    row.train_pdcr /= static_cast<double>(steps_per_epoch);
    row.test = evaluate(net, data.test, cfg.batch_size).report;
    result.rows.push_back(row);
    csv += format_epoch_row(row) + "\n";
    if (write) write_file(path("epochs.csv"), csv);
    if (row.test.di > best_di) {
      best_di = row.test.di;
      result.best_epoch = epoch;
      result.best_di = best_di;
      if (write) write_checkpoint(path("best.ckpt"), net.state());
    }
  }
  if (write) write_checkpoint(path("final.ckpt"), net.state());
  return result;
}

std::vector<SweepRow> fraction_sweep(const RunConfig& cfg, const Dataset& data, const std::vector<double>& fractions,
                                     const std::string& out_csv, const std::string& run_dir) {
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("sweep fraction " + format_real(f) + " is outside (0,1]");
  }
  cfg.validate();
  std::vector<SweepRow> rows;
  std::string csv = std::string(kSweepCsvHeader) + "\n";
  for (double f : fractions) {
    SweepRow row;
    row.fraction = f;
    RunConfig run = cfg;
    run.fraction = f;
    const auto start = std::chrono::steady_clock::now();
    try {
      const std::string dir = run_dir.empty() ? "" : (fs::path(run_dir) / ("fraction_" + format_real(f))).string();
      const TrainResult r = train(run, data, dir);
      row.n_train = r.train_indices.size();
      row.ja = r.rows.back().test.ja;
      row.di = r.rows.back().test.di;
      row.ac = r.rows.back().test.ac;
    } catch (const ConfigError& e) {
      std::cerr << "warning: fraction " << format_real(f) << " skipped: " << e.what() << "\n";
      row.skipped = true;
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back(row);
    if (row.skipped) {
      csv += format_real(f) + ",0,NA,NA,NA," + format_real(row.wall_seconds) + "\n";
    } else {
      csv += format_real(f) + "," + std::to_string(row.n_train) + "," + format_real(row.ja) + "," +
             format_real(row.di) + "," + format_real(row.ac) + "," + format_real(row.wall_seconds) + "\n";
    }
    if (!out_csv.empty()) write_file(out_csv, csv);
  }
  return rows;
}

}  // namespace dragsaw
