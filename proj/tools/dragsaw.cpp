// Command-line front end: dataset synthesis, training, evaluation, sweeps and
// audit dumps (receptive fields, affinities, uncertainty maps, embeddings).
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dragsaw/affinity.hpp"
#include "dragsaw/checkpoint.hpp"
#include "dragsaw/dataset.hpp"
#include "dragsaw/errors.hpp"
#include "dragsaw/metrics.hpp"
#include "dragsaw/network.hpp"
#include "dragsaw/pgm.hpp"
#include "dragsaw/run_config.hpp"
#include "dragsaw/trainer.hpp"
#include "dragsaw/uafs.hpp"

namespace fs = std::filesystem;
using namespace dragsaw;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const std::string item = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

/// defaults < DRAGSAW_SEED < config file < --set overrides.
RunConfig build_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig cfg = default_run_config();
  if (!config_path.empty()) apply_config_file(cfg, config_path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

Tensor load_image_tensor(const std::string& path) {
  const GrayImage img = gray_from_bytes(read_pgm(path));
  Sample s{img, {}};
  return images_to_tensor({&s});
}

struct SynthArgs {
  std::string out;
  std::size_t count = 400;
  std::optional<std::size_t> test_count;
  std::size_t size = 64;
  std::size_t classes = 2;
  std::uint64_t seed = 42;
};

int cmd_synth(const SynthArgs& a) {
  SyntheticConfig cfg;
  cfg.count = a.count;
  cfg.size = a.size;
  cfg.num_classes = a.classes;
  cfg.seed = a.seed;
  cfg.validate();
  ensure_dir(a.out);
  generate_synthetic(cfg, Split::kTrain, a.out);
  SyntheticConfig test = cfg;
  test.count = a.test_count.value_or(a.count / 4);
  generate_synthetic(test, Split::kTest, a.out);
  std::cout << (fs::path(a.out) / manifest_filename(Split::kTrain)).string() << "\n"
            << (fs::path(a.out) / manifest_filename(Split::kTest)).string() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<double> fraction;
  bool no_pdcr = false;
  bool no_uafs = false;
  std::string variant;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = build_config(a.config, a.overrides);
  if (!a.data.empty()) cfg.data_dir = a.data;
  if (a.fraction) cfg.fraction = *a.fraction;
  if (a.no_pdcr) cfg.pdcr.lambda = 0.0;
  if (a.no_uafs) cfg.net.uafs_layers.clear();
  if (!a.variant.empty()) cfg.pdcr.variant = parse_affinity_variant(a.variant);
  cfg.validate();
  const Dataset data = load_dataset(cfg);
  const TrainResult r = train(cfg, data, a.out);
  const auto& best = r.rows[r.best_epoch == 0 ? 0 : r.best_epoch - 1];
  std::cout << "configuration " << cfg.label() << "\n"
            << "best epoch " << r.best_epoch << " ja " << format_real(best.test.ja) << " di "
            << format_real(best.test.di) << " ac " << format_real(best.test.ac) << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& out, std::size_t batch) {
  SegNet net = SegNet::from_state(read_checkpoint(checkpoint));
  const auto manifest = read_manifest((fs::path(data_dir) / manifest_filename(Split::kTest)).string(), Split::kTest);
  const auto samples = load_samples(manifest, net.config().num_classes);
  const Evaluation ev = evaluate(net, samples, batch);
  if (!out.empty()) write_sample_metrics_csv(out, ev.per_sample);
  std::cout << "ja " << format_real(ev.report.ja) << " di " << format_real(ev.report.di) << " ac "
            << format_real(ev.report.ac) << " samples " << ev.report.samples << "\n";
  return 0;
}

int cmd_rf(const std::string& config, const std::vector<std::string>& overrides) {
  const RunConfig cfg = build_config(config, overrides);
  cfg.validate();
  const SegNet net(cfg.network_config());
  std::cout << "block,rf,jump,start\n";
  for (std::size_t b = 1; b <= cfg.net.depth(); ++b) {
    const auto g = net.block_geometry(static_cast<int>(b));
    std::cout << b << "," << g.rf << "," << g.jump << "," << g.start << "\n";
  }
  return 0;
}

struct AffinityArgs {
  std::string mask;
  int block = 2;
  std::size_t n = 128;
  std::string variant = "continuous";
  std::string denominator = "unclipped";
  std::size_t classes = 2;
  std::string out;
  std::string config;
};

int cmd_affinity(const AffinityArgs& a) {
  RunConfig cfg = build_config(a.config, {});
  cfg.data.num_classes = a.classes;
  AffinityOptions options{parse_affinity_variant(a.variant), parse_ratio_denominator(a.denominator)};
  const LabelImage mask = labels_from_bytes(read_pgm(a.mask), a.classes);
  const SegNet net(cfg.network_config());
  const LayerGeometry geom = net.block_geometry(a.block);
  const auto stride = static_cast<std::size_t>(geom.jump);
  if (mask.height % stride != 0 || mask.width % stride != 0) {
    throw ConfigError("mask size is not divisible by the block stride " + std::to_string(stride));
  }
  const SampleGrid grid = grid_sample_coords(mask.height / stride, mask.width / stride, a.n);
  const AffinityMatrix w = affinity_matrix(mask, grid.coords, geom, a.classes, options);
  std::string csv = "i,j,w_ij\n";
  for (std::size_t i = 0; i < w.n; ++i)
    for (std::size_t j = 0; j < w.n; ++j)
      csv += std::to_string(i) + "," + std::to_string(j) + "," + format_real(w.at(i, j)) + "\n";
  write_file(a.out, csv);
  return 0;
}

int cmd_uncertainty(const std::string& checkpoint, const std::string& image, const std::string& out) {
  SegNet net = SegNet::from_state(read_checkpoint(checkpoint));
  NoGradGuard no_grad;
  ForwardOptions options;
  options.taps = std::set<int>{};
  options.collect_uncertainty = true;
  const auto result = net.forward(load_image_tensor(image), Mode::kEval, options);
  ensure_dir(out);
  for (const auto& name : net.uafs_layer_order()) {
    const auto map = to_uncertainty_maps(result.uncertainty.at(name)).at(0);
    const GrayImage img{map.height, map.width, map.u};
    const std::string path = (fs::path(out) / (name + ".pgm")).string();
    write_pgm(path, to_bytes(img));
    std::cout << path << "\n";
  }
  return 0;
}

int cmd_embeddings(const std::string& checkpoint, const std::string& image, const std::string& blocks_arg,
                   std::size_t n, const std::string& out) {
  SegNet net = SegNet::from_state(read_checkpoint(checkpoint));
  std::set<int> blocks;
  for (const auto& b : split_csv(blocks_arg)) {
    try {
      blocks.insert(std::stoi(b));
    } catch (const std::exception&) {
      throw ConfigError("--blocks: '" + b + "' is not a block index");
    }
  }
  NoGradGuard no_grad;
  ForwardOptions options;
  options.taps = blocks;
  const auto result = net.forward(load_image_tensor(image), Mode::kEval, options);
  // One row per sampled unit; the vector is space-separated in the last column.
  std::string csv = "block,i,y,x,vector\n";
  for (int block : blocks) {
    const Tensor& tap = result.taps.at(block);
    const auto grid = grid_sample_coords(tap.dim(2), tap.dim(3), n);
    const Tensor vectors = gather_spatial(tap, 0, grid.coords);
    const auto v = vectors.data();
    const std::size_t dim = vectors.dim(1);
    for (std::size_t i = 0; i < grid.coords.size(); ++i) {
      csv += std::to_string(block) + "," + std::to_string(i) + "," + std::to_string(grid.coords[i].y) + "," +
             std::to_string(grid.coords[i].x) + ",";
      for (std::size_t d = 0; d < dim; ++d) csv += (d ? " " : "") + format_real(v[i * dim + d]);
      csv += "\n";
    }
  }
  write_file(out, csv);
  return 0;
}

int cmd_sweep(const std::string& config, const std::vector<std::string>& overrides, const std::string& data_dir,
              const std::string& fractions_arg, const std::string& out, const std::string& runs) {
  RunConfig cfg = build_config(config, overrides);
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  std::vector<double> fractions;
  for (const auto& f : split_csv(fractions_arg)) {
    try {
      fractions.push_back(std::stod(f));
    } catch (const std::exception&) {
      throw ConfigError("--fractions: '" + f + "' is not a number");
    }
  }
  if (fractions.empty()) throw ConfigError("--fractions is empty");
  cfg.validate();
  const Dataset data = load_dataset(cfg);
  fraction_sweep(cfg, data, fractions, out, runs);
  std::cout << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dragsaw: contrastive regularization and uncertainty gating for segmentation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic train/test sets");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--count", synth.count, "training samples");
  synth_cmd->add_option("--test-count", synth.test_count, "test samples (default count/4)");
  synth_cmd->add_option("--size", synth.size, "image side length");
  synth_cmd->add_option("--classes", synth.classes, "number of classes including background");
  synth_cmd->add_option("--seed", synth.seed, "data seed");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train a network");
  train_cmd->add_option("--config", tr.config, "key = value config file");
  train_cmd->add_option("--data", tr.data, "directory holding train/test manifests");
  train_cmd->add_option("--out", tr.out, "run directory")->required();
  train_cmd->add_option("--fraction", tr.fraction, "fraction of the training set");
  train_cmd->add_flag("--no-pdcr", tr.no_pdcr, "disable the contrastive term");
  train_cmd->add_flag("--no-uafs", tr.no_uafs, "remove all uncertainty gates");
  train_cmd->add_option("--affinity-variant", tr.variant, "continuous|constant|diagonal|bipartite");
  train_cmd->add_option("--set", tr.overrides, "key=value override (repeatable)");

  std::string ckpt, data_dir, out, image, blocks = "2,3,4", config, fractions = "0.05,0.1,0.25,0.5,1.0", runs;
  std::size_t batch = 8, n = 128;
  std::vector<std::string> overrides;

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a test manifest");
  eval_cmd->add_option("--checkpoint", ckpt)->required();
  eval_cmd->add_option("--data", data_dir, "directory holding test_manifest.tsv")->required();
  eval_cmd->add_option("--out", out, "per-sample CSV");
  eval_cmd->add_option("--batch-size", batch);

  auto* rf_cmd = app.add_subcommand("rf", "print receptive-field geometry per encoder block");
  rf_cmd->add_option("--config", config);
  rf_cmd->add_option("--set", overrides, "key=value override (repeatable)");

  AffinityArgs aff;
  auto* aff_cmd = app.add_subcommand("affinity", "dump the pair weights of a mask");
  aff_cmd->add_option("--mask", aff.mask)->required();
  aff_cmd->add_option("--block", aff.block);
  aff_cmd->add_option("--n", aff.n);
  aff_cmd->add_option("--variant", aff.variant);
  aff_cmd->add_option("--denominator", aff.denominator, "unclipped|clipped");
  aff_cmd->add_option("--classes", aff.classes);
  aff_cmd->add_option("--config", aff.config);
  aff_cmd->add_option("--out", aff.out)->required();

  auto* unc_cmd = app.add_subcommand("uncertainty", "write per-layer uncertainty maps as PGM");
  unc_cmd->add_option("--checkpoint", ckpt)->required();
  unc_cmd->add_option("--image", image)->required();
  unc_cmd->add_option("--out", out)->required();

  auto* emb_cmd = app.add_subcommand("embeddings", "export sampled hidden vectors");
  emb_cmd->add_option("--checkpoint", ckpt)->required();
  emb_cmd->add_option("--image", image)->required();
  emb_cmd->add_option("--blocks", blocks);
  emb_cmd->add_option("--n", n);
  emb_cmd->add_option("--out", out)->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "train on nested fractions of the training set");
  sweep_cmd->add_option("--config", config);
  sweep_cmd->add_option("--data", data_dir);
  sweep_cmd->add_option("--fractions", fractions);
  sweep_cmd->add_option("--out", out)->required();
  sweep_cmd->add_option("--runs", runs, "directory for per-fraction run artifacts");
  sweep_cmd->add_option("--set", overrides, "key=value override (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth);
    if (train_cmd->parsed()) return cmd_train(tr);
    if (eval_cmd->parsed()) return cmd_eval(ckpt, data_dir, out, batch);
    if (rf_cmd->parsed()) return cmd_rf(config, overrides);
    if (aff_cmd->parsed()) return cmd_affinity(aff);
    if (unc_cmd->parsed()) return cmd_uncertainty(ckpt, image, out);
    if (emb_cmd->parsed()) return cmd_embeddings(ckpt, image, blocks, n, out);
    if (sweep_cmd->parsed()) return cmd_sweep(config, overrides, data_dir, fractions, out, runs);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
