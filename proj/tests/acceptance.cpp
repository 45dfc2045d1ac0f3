// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. The training criteria take most of the time (about half an
// hour on one core); --only restricts the run to a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dragsaw/affinity.hpp"
#include "dragsaw/checkpoint.hpp"
#include "dragsaw/dataset.hpp"
#include "dragsaw/errors.hpp"
#include "dragsaw/geometry.hpp"
#include "dragsaw/metrics.hpp"
#include "dragsaw/network.hpp"
#include "dragsaw/pdcr.hpp"
#include "dragsaw/pgm.hpp"
#include "dragsaw/trainer.hpp"
#include "dragsaw/uafs.hpp"
#include "grad_suite.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace dragsaw;

namespace {

// Training thresholds, pinned after the calibration run described in README.
constexpr double kMinBaselineDice = 0.85;
constexpr double kMaxDiceDrop = 0.02;
constexpr double kRunBudgetSeconds = 15 * 60;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Collects failed checks for one criterion; the first few are reported.
struct Verdict {
  std::vector<std::string> failures;
  std::string note;
  void check(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

std::string fmt(double v) { return format_real(v); }

std::vector<std::vector<double>> rows_of(const Tensor& t) {
  std::vector<std::vector<double>> out(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) out[i][j] = t.at({i, j});
  return out;
}

LabelImage random_mask(std::size_t h, std::size_t w, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, static_cast<int>(classes) - 1);
  LabelImage m{h, w, std::vector<std::uint8_t>(h * w)};
  for (auto& v : m.labels) v = static_cast<std::uint8_t>(d(rng));
  return m;
}

/// Blocky mask: random rectangles over a background, so patches see mixed ratios.
LabelImage blocky_mask(std::size_t side, std::size_t classes, std::mt19937_64& rng) {
  LabelImage m{side, side, std::vector<std::uint8_t>(side * side, 0)};
  std::uniform_int_distribution<std::size_t> pos(0, side - 1);
  std::uniform_int_distribution<int> cls(1, static_cast<int>(classes) - 1);
  for (int r = 0; r < 4; ++r) {
    std::size_t y0 = pos(rng), y1 = pos(rng), x0 = pos(rng), x1 = pos(rng);
    if (y0 > y1) std::swap(y0, y1);
    if (x0 > x1) std::swap(x0, x1);
    const auto c = static_cast<std::uint8_t>(cls(rng));
    for (std::size_t y = y0; y <= y1; ++y)
      for (std::size_t x = x0; x <= x1; ++x) m.labels[y * side + x] = c;
  }
  return m;
}

// ---------------------------------------------------------------------------

Verdict pdcr_oracle() {
  Verdict v;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> nd(1, 8), dd(1, 8);
  std::uniform_real_distribution<double> u(0.0, 1.0), taud(0.05, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = nd(rng), d = dd(rng);
    const double tau = taud(rng);
    const bool diag = trial % 2 == 0;
    const Tensor f = gradsuite::away_from_zero({n, d}, rng, false);
    AffinityMatrix w{n, std::vector<double>(n * n)};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) w.w[i * n + j] = w.w[j * n + i] = i == j ? 1.0 : u(rng);
    const auto feats = rows_of(f);
    std::vector<std::vector<double>> s(n, std::vector<double>(n)), wv(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        s[i][j] = oracle::cosine(feats[i], feats[j]);
        wv[i][j] = w.at(i, j);
      }
    const double got = pdcr_layer_loss(cosine_similarity_matrix(f), w, tau, diag).item();
    const double err = std::fabs(got - oracle::pdcr_loop(s, wv, tau, diag));
    worst = std::max(worst, err);
    v.check(err <= 1e-10, "trial " + std::to_string(trial) + " abs err " + fmt(err));
  }
  const double t = seconds_since(t0);
  v.check(t < 5.0, "runtime " + fmt(t) + " s");
  v.note = "200 trials, max abs err " + fmt(worst) + ", " + fmt(t) + " s";
  return v;
}

Verdict hand_loss() {
  Verdict v;
  const Tensor f = Tensor::from({2, 2}, std::vector<double>{1, 0, 0, 1});
  const AffinityMatrix w{2, {1, 0, 0, 1}};
  const double expected = 2 * (std::log(2.0) - 1) + 2 * std::log(2.0);
  const double got = pdcr_layer_loss(cosine_similarity_matrix(f), w, 1.0, true).item();
  v.check(std::fabs(got - expected) <= 1e-12, "got " + fmt(got) + " expected " + fmt(expected));
  v.note = "loss " + fmt(got);
  return v;
}

Verdict rf_oracle() {
  Verdict v;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  int stacks = 0;
  std::size_t units = 0;
  while (stacks < 20) {
    ConvStackSpec spec = oracle::random_stack(rng, 4, 40);
    try {
      spec.validate();
    } catch (const ConfigError&) {
      continue;
    }
    ++stacks;
    const std::size_t depth = spec.layers.size();
    const auto out = spec.extent_after(depth);
    const auto geom = layer_geometry(spec, depth);
    const std::string tag = "stack " + std::to_string(stacks);
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < out.width; ++x) {
        ++units;
        const auto dep = oracle::dependency(spec.layers, 40, 40, y, x);
        const auto rect = patch_bounds(geom, y, x, spec.image_size);
        if (dep.empty) {
          v.check(false, tag + ": unit depends on nothing");
          continue;
        }
        v.check(rect.top <= dep.top && rect.left <= dep.left && rect.bottom >= dep.bottom && rect.right >= dep.right,
                tag + ": dependency escapes the patch");
        if (rect.clipped_area == rect.unclipped_area) {
          v.check(rect.top == dep.top && rect.left == dep.left && rect.bottom == dep.bottom && rect.right == dep.right,
                  tag + ": interior patch differs from dependency box");
          v.check(dep.bottom - dep.top == geom.rf && dep.right - dep.left == geom.rf, tag + ": rf size mismatch");
        }
      }
  }
  const double t = seconds_since(t0);
  v.check(t < 30.0, "runtime " + fmt(t) + " s");
  v.note = "20 stacks, " + std::to_string(units) + " units, " + fmt(t) + " s";
  return v;
}

Verdict gradient_suite() {
  Verdict v;
  const auto t0 = Clock::now();
  std::vector<gradsuite::Case> cases = gradsuite::primitive_cases(1e-6);
  for (std::size_t n : {2u, 5u, 8u})
    for (bool diag : {true, false}) cases.push_back(gradsuite::pdcr_feature_case(n, 4, diag, 40 + n));
  cases.push_back(gradsuite::uafs_case());
  cases.push_back(gradsuite::full_net_case());
  double worst = 0.0;
  std::size_t checked = 0;
  for (const auto& c : cases) {
    worst = std::max(worst, c.report.max_rel_error);
    checked += c.report.checked;
    v.check(c.report.passed, c.name + " rel err " + fmt(c.report.max_rel_error));
  }
  const double t = seconds_since(t0);
  v.check(t < 120.0, "runtime " + fmt(t) + " s");
  v.note = std::to_string(cases.size()) + " cases, " + std::to_string(checked) + " entries, worst rel err " + fmt(worst) +
           ", " + fmt(t) + " s";
  return v;
}

Verdict affinity_invariants() {
  Verdict v;
  std::mt19937_64 rng(505);
  const LayerGeometry geoms[] = {{5, 2, 0}, {13, 4, 0}, {29, 8, 0}};
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t classes = 2 + trial % 3;
    const LabelImage mask = trial % 2 ? random_mask(32, 32, classes, rng) : blocky_mask(32, classes, rng);
    const LayerGeometry geom = geoms[trial % 3];
    const std::size_t side = 32 / static_cast<std::size_t>(geom.jump);
    const auto grid = grid_sample_coords(side, side, 24);
    for (auto den : {RatioDenominator::kUnclipped, RatioDenominator::kClipped}) {
      const auto w = affinity_matrix(mask, grid.coords, geom, classes, {AffinityVariant::kContinuous, den});
      for (std::size_t i = 0; i < w.n; ++i) {
        v.check(w.at(i, i) == 1.0, "diagonal " + fmt(w.at(i, i)));
        for (std::size_t j = 0; j < w.n; ++j) {
          v.check(w.at(i, j) == w.at(j, i), "asymmetric pair");
          v.check(w.at(i, j) >= 0.0 && w.at(i, j) <= 1.0, "out of range " + fmt(w.at(i, j)));
        }
      }
    }
    const auto c = affinity_matrix(mask, grid.coords, geom, classes, {AffinityVariant::kConstant, {}});
    const auto d = affinity_matrix(mask, grid.coords, geom, classes, {AffinityVariant::kDiagonal, {}});
    for (std::size_t i = 0; i < c.n; ++i)
      for (std::size_t j = 0; j < c.n; ++j) {
        v.check(c.at(i, j) == 0.5, "constant variant " + fmt(c.at(i, j)));
        v.check(d.at(i, j) == (i == j ? 1.0 : 0.0), "diagonal variant " + fmt(d.at(i, j)));
      }
  }
  // Left half background, right half foreground: two blocks of ones.
  LabelImage half{32, 32, std::vector<std::uint8_t>(32 * 32, 0)};
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 16; x < 32; ++x) half.labels[y * 32 + x] = 1;
  const LayerGeometry geom{13, 4, 0};
  const auto grid = grid_sample_coords(8, 8, 64);
  const auto b = affinity_matrix(half, grid.coords, geom, 2, {AffinityVariant::kBipartite, {}});
  std::size_t ones = 0;
  for (std::size_t i = 0; i < b.n; ++i)
    for (std::size_t j = 0; j < b.n; ++j) {
      const bool same_side = (grid.coords[i].x * 4 >= 16) == (grid.coords[j].x * 4 >= 16);
      v.check(b.at(i, j) == (same_side ? 1.0 : 0.0), "bipartite entry " + fmt(b.at(i, j)));
      ones += b.at(i, j) == 1.0;
    }
  v.check(ones == 2 * 32 * 32, "bipartite block sizes");
  v.note = "12 masks x 2 denominators, half-split bipartite 64x64";
  return v;
}

Verdict entropy_invariants() {
  Verdict v;
  for (std::size_t m : {2u, 3u, 4u, 7u}) {
    std::vector<double> one_hot(m, 0.0);
    one_hot[m - 1] = 1.0;
    const double e0 = entropy_map(Tensor::from({1, m, 1, 1}, one_hot)).item();
    v.check(std::fabs(e0) <= 1e-12, "one-hot M=" + std::to_string(m) + " gives " + fmt(e0));
    const double e1 = entropy_map(Tensor::full({1, m, 1, 1}, 1.0 / static_cast<double>(m))).item();
    v.check(std::fabs(e1 - 1.0) <= 1e-12, "uniform M=" + std::to_string(m) + " gives " + fmt(e1));
  }
  const double skew = entropy_map(Tensor::from({1, 2, 1, 1}, std::vector<double>{0.75, 0.25})).item();
  v.check(std::fabs(skew - 0.811278) <= 1e-6, "(0.75,0.25) gives " + fmt(skew));

  // Scales from trained-looking heads on random features.
  std::mt19937_64 rng(606);
  double lo = 2.0, hi = 1.0;
  for (std::size_t m : {2u, 3u, 5u}) {
    UafsHead head = make_uafs_head(4, m, rng);
    gradsuite::randomize(head.conv2_weight, rng, 3.0);
    gradsuite::randomize(head.conv2_bias, rng, 1.0);
    const Tensor h = gradsuite::away_from_zero({2, 4, 6, 6}, rng, false);
    const auto g = uafs_gate(h, head, Mode::kTrain);
    const auto hv = h.data(), gv = g.gated.data();
    for (std::size_t i = 0; i < hv.size(); ++i) {
      const double scale = gv[i] / hv[i];
      lo = std::min(lo, scale);
      hi = std::max(hi, scale);
      v.check(scale >= 1.0 - 1e-12 && scale <= 2.0 + 1e-12, "scale " + fmt(scale));
    }
  }
  v.note = "(0.75,0.25) -> " + fmt(skew) + ", scales in [" + fmt(lo) + ", " + fmt(hi) + "]";
  return v;
}

Verdict zero_init_noop() {
  Verdict v;
  for (std::uint64_t seed : {3u, 17u}) {
    SegNetConfig gated;
    gated.seed = seed;
    SegNetConfig plain = gated;
    plain.uafs_layers.clear();
    SegNet a(gated), b(plain);
    std::mt19937_64 rng(seed + 1);
    const Tensor x = gradsuite::random_tensor({2, 1, 64, 64}, rng, 0.0, 1.0, false);
    for (Mode mode : {Mode::kTrain, Mode::kEval}) {
      const Tensor la = a.forward(x, mode).logits, lb = b.forward(x, mode).logits;
      v.check(la.shape() == lb.shape() && std::equal(la.data().begin(), la.data().end(), lb.data().begin()),
              "logits differ for seed " + std::to_string(seed));
    }
  }
  v.note = "default architecture, 2 seeds, train and eval mode";
  return v;
}

// ---------------------------------------------------------------------------
// Training criteria share runs.

struct Runs {
  fs::path root;
  std::optional<Dataset> data;
  std::optional<TrainResult> baseline, full_a, full_b;
  double baseline_s = 0, full_a_s = 0, full_b_s = 0;
  std::vector<MetricsReport> evaluations;  // every evaluation row produced so far

  const Dataset& dataset() {
    if (!data) data = load_dataset(default_run_config());
    return *data;
  }
  TrainResult run(const RunConfig& cfg, const std::string& name, double& wall) {
    const auto t0 = Clock::now();
    TrainResult r = train(cfg, dataset(), (root / name).string());
    wall = seconds_since(t0);
    for (const auto& row : r.rows) evaluations.push_back(row.test);
    std::cout << "  " << name << ": " << r.rows.size() << " epochs in " << fmt(wall) << " s, final DI "
              << fmt(r.rows.back().test.di) << std::endl;
    return r;
  }
  const TrainResult& get_baseline() {
    if (!baseline) {
      RunConfig cfg = default_run_config();
      cfg.pdcr.lambda = 0.0;
      cfg.net.uafs_layers.clear();
      baseline = run(cfg, "baseline", baseline_s);
    }
    return *baseline;
  }
  const TrainResult& get_full_a() {
    if (!full_a) full_a = run(default_run_config(), "full_a", full_a_s);
    return *full_a;
  }
  const TrainResult& get_full_b() {
    if (!full_b) full_b = run(default_run_config(), "full_b", full_b_s);
    return *full_b;
  }
};

bool all_finite(const TrainResult& r) {
  for (const auto& row : r.rows)
    if (!std::isfinite(row.train_ce) || !std::isfinite(row.train_pdcr) || !std::isfinite(row.test.di)) return false;
  return true;
}

Verdict training_sanity(Runs& runs) {
  Verdict v;
  const auto& base = runs.get_baseline();
  std::optional<TrainResult> full;
  try {
    full = runs.get_full_a();
  } catch (const NonFiniteError& e) {
    v.check(false, std::string("full run diverged: ") + e.what());
    return v;
  }
  v.check(all_finite(base) && all_finite(*full), "non-finite value in an epoch row");
  const double base_di = base.rows.back().test.di, full_di = full->rows.back().test.di;
  v.check(base_di >= kMinBaselineDice, "baseline DI " + fmt(base_di) + " < " + fmt(kMinBaselineDice));
  v.check(full_di >= base_di - kMaxDiceDrop,
          "pdcr+uafs DI " + fmt(full_di) + " < baseline DI - " + fmt(kMaxDiceDrop) + " = " + fmt(base_di - kMaxDiceDrop));
  v.check(runs.baseline_s < kRunBudgetSeconds, "baseline took " + fmt(runs.baseline_s) + " s");
  v.check(runs.full_a_s < kRunBudgetSeconds, "pdcr+uafs took " + fmt(runs.full_a_s) + " s");
  v.note = "baseline DI " + fmt(base_di) + " (" + fmt(runs.baseline_s) + " s), pdcr+uafs DI " + fmt(full_di) + " (" +
           fmt(runs.full_a_s) + " s)";
  return v;
}

Verdict determinism(Runs& runs) {
  Verdict v;
  runs.get_full_a();
  runs.get_full_b();
  const std::string a = read_file((runs.root / "full_a" / "epochs.csv").string());
  const std::string b = read_file((runs.root / "full_b" / "epochs.csv").string());
  v.check(!a.empty() && a == b, "epochs.csv differs between identical runs");
  v.note = std::to_string(a.size()) + " bytes, identical";
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

Verdict fraction_sweep_check(Runs& runs) {
  Verdict v;
  const std::vector<double> fractions{0.05, 0.1, 0.25, 0.5, 1.0};
  const auto csv_path = runs.root / "sweep.csv";
  const auto run_dir = runs.root / "sweep";
  const RunConfig cfg = default_run_config();
  const auto t0 = Clock::now();
  const auto rows = fraction_sweep(cfg, runs.dataset(), fractions, csv_path.string(), run_dir.string());
  const double t = seconds_since(t0);

  const auto lines = split(read_file(csv_path.string()), '\n');
  v.check(lines.size() == 1 + fractions.size(), "expected " + std::to_string(1 + fractions.size()) + " CSV lines");
  v.check(!lines.empty() && lines[0] == "fraction,n_train,ja,di,ac,wall_seconds", "CSV header");
  const std::size_t n = runs.dataset().train.size();
  std::vector<std::size_t> previous;
  std::string summary;
  for (std::size_t k = 0; k < fractions.size() && k + 1 < lines.size(); ++k) {
    const auto fields = split(lines[k + 1], ',');
    if (fields.size() != 6) {
      v.check(false, "row " + std::to_string(k) + " has " + std::to_string(fields.size()) + " fields");
      continue;
    }
    const auto expected_n = static_cast<std::size_t>(std::ceil(fractions[k] * static_cast<double>(n) - 1e-9));
    v.check(std::stod(fields[0]) == fractions[k], "fraction column " + fields[0]);
    v.check(std::stoul(fields[1]) == expected_n, "n_train " + fields[1] + " != " + std::to_string(expected_n));
    for (int c = 2; c <= 4; ++c) {
      const double m = std::stod(fields[c]);
      v.check(m >= 0.0 && m <= 1.0, "metric out of range " + fields[c]);
    }
    v.check(std::stod(fields[3]) >= std::stod(fields[2]), "DI < JA in sweep row");
    v.check(std::stod(fields[5]) >= 0.0, "wall_seconds " + fields[5]);

    // Nesting: each subset is a prefix of the next larger one.
    std::vector<std::size_t> indices;
    for (const auto& s : split(read_file((run_dir / ("fraction_" + format_real(fractions[k])) / "train_indices.txt").string()), '\n'))
      indices.push_back(std::stoul(s));
    v.check(indices.size() == expected_n, "train_indices size");
    v.check(std::set<std::size_t>(indices.begin(), indices.end()).size() == indices.size(), "duplicate indices");
    v.check(indices.size() >= previous.size() && std::equal(previous.begin(), previous.end(), indices.begin()),
            "fraction " + fields[0] + " does not extend the smaller subset");
    previous = indices;
    summary += (k ? "; " : "") + fields[0] + ": DI " + fields[3];
  }
  for (const auto& r : rows) runs.evaluations.push_back({r.ja, r.di, r.ac, {}, {}, 0});
  v.note = summary + " (" + fmt(t) + " s)";
  return v;
}

Verdict metric_identities(Runs& runs) {
  Verdict v;
  // Hand case: prediction covers half of the truth.
  LabelImage truth{2, 4, {1, 1, 1, 1, 0, 0, 0, 0}}, pred{2, 4, {1, 1, 0, 0, 0, 0, 0, 0}};
  ConfusionCounts c(2);
  c.add(pred, truth);
  const auto r = metrics_from_counts(c, 1);
  v.check(r.di == 2.0 / 3.0, "hand DI " + fmt(r.di));
  v.check(r.ja == 0.5, "hand JA " + fmt(r.ja));

  std::mt19937_64 rng(1111);
  std::size_t rows = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t classes = 2 + trial % 3;
    ConfusionCounts counts(classes);
    const std::size_t images = 1 + trial % 4;
    for (std::size_t i = 0; i < images; ++i) counts.add(random_mask(6, 6, classes, rng), random_mask(6, 6, classes, rng));
    const auto m = metrics_from_counts(counts, images);
    v.check(m.di >= m.ja, "random DI " + fmt(m.di) + " < JA " + fmt(m.ja));
    ++rows;
  }
  for (const auto& m : runs.evaluations) {
    v.check(m.di >= m.ja, "training row DI " + fmt(m.di) + " < JA " + fmt(m.ja));
    ++rows;
  }
  v.note = "hand DI " + fmt(r.di) + " JA " + fmt(r.ja) + ", " + std::to_string(rows) + " rows with DI >= JA";
  return v;
}

Verdict io_bit_exact(Runs& runs) {
  Verdict v;
  const fs::path dir = runs.root / "io";
  fs::create_directories(dir);
  std::mt19937_64 rng(1212);
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {7, 13}, {64, 64}}) {
    ByteImage raw{h, w, {}};
    for (std::size_t i = 0; i < h * w; ++i) raw.bytes.push_back(static_cast<std::uint8_t>(byte(rng)));
    const auto path = (dir / "img.pgm").string();
    write_pgm(path, raw);
    v.check(read_pgm(path) == raw, "pgm " + std::to_string(h) + "x" + std::to_string(w) + " changed");
    v.check(to_bytes(gray_from_bytes(raw)) == raw, "gray conversion is lossy");
  }
  const Sample s = generate_sample(SyntheticConfig{}, Split::kTest, 0);
  v.check(to_bytes(gray_from_bytes(to_bytes(s.image))) == to_bytes(s.image), "synthetic image round trip");

  SegNetConfig cfg;
  cfg.seed = 12;
  SegNet net(cfg);
  const auto one = (dir / "one.ckpt").string(), two = (dir / "two.ckpt").string();
  write_checkpoint(one, net.state());
  write_checkpoint(two, read_checkpoint(one));
  const std::string a = read_file(one), b = read_file(two);
  v.check(a == b, "checkpoint bytes differ after write, read, write");
  SegNet back = SegNet::from_state(read_checkpoint(one));
  write_checkpoint(two, back.state());
  v.check(read_file(two) == a, "rebuilt network writes different bytes");
  v.note = "3 random PGMs, checkpoint of " + std::to_string(a.size()) + " bytes";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string out = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--out", out, "directory for training artifacts");
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  Runs runs;
  runs.root = out;
  fs::create_directories(runs.root);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"pdcr loss matches the per-pair loop", pdcr_oracle},
      {"hand-computed two-vector loss", hand_loss},
      {"receptive fields match dependency propagation", rf_oracle},
      {"analytic gradients match central differences", gradient_suite},
      {"affinity invariants", affinity_invariants},
      {"entropy invariants", entropy_invariants},
      {"zero-init gates are a no-op", zero_init_noop},
      {"training sanity", [&] { return training_sanity(runs); }},
      {"identical runs give identical epoch CSVs", [&] { return determinism(runs); }},
      {"fraction sweep", [&] { return fraction_sweep_check(runs); }},
      {"metric identities", [&] { return metric_identities(runs); }},
      {"pgm and checkpoint round trips", [&] { return io_bit_exact(runs); }},
  };

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v.failures.push_back(std::string("exception: ") + e.what());
    }
    const bool ok = v.failures.empty();
    failed += !ok;
    std::cout << (ok ? "PASS" : "FAIL") << " " << id << " " << criteria[k].first;
    if (!v.note.empty()) std::cout << " | " << v.note;
    std::cout << std::endl;
    for (std::size_t i = 0; i < std::min<std::size_t>(v.failures.size(), 5); ++i)
      std::cout << "    " << v.failures[i] << "\n";
    if (v.failures.size() > 5) std::cout << "    ... " << v.failures.size() - 5 << " more\n";
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
