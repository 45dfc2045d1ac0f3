#include "dragsaw/dataset.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <sstream>

#include "dragsaw/errors.hpp"
#include "dragsaw/pgm.hpp"
#include "dragsaw/random.hpp"

namespace dragsaw {

namespace fs = std::filesystem;

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

void SyntheticConfig::validate() const {
  if (size == 0 || size % kSizeMultiple != 0) {
    throw ConfigError("data.size must be a positive multiple of " + std::to_string(kSizeMultiple) + ", got " +
                      std::to_string(size));
  }
  if (num_classes < 2 || num_classes > 256) throw ConfigError("data.num_classes must be in [2,256]");
  if (min_blobs < 1 || min_blobs > max_blobs) throw ConfigError("data blob range must satisfy 1 <= min <= max");
  if (!(min_offset <= max_offset)) throw ConfigError("data offset range is empty");
  if (!(min_sigma >= 0.0 && min_sigma <= max_sigma)) throw ConfigError("data blur sigma range is empty or negative");
  if (!(noise_sigma >= 0.0)) throw ConfigError("data.noise must be >= 0");
}

namespace {

constexpr int kMaxAttempts = 64;

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[i + radius];
  }
  for (double& v : k) v /= total;
  return k;
}

// Separable blur with edge replication.
void blur(std::vector<double>& img, std::size_t n, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const int last = static_cast<int>(n) - 1;
  std::vector<double> tmp(img.size());
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        const int xx = std::clamp(static_cast<int>(x) + d, 0, last);
        acc += k[d + radius] * img[y * n + xx];
      }
      tmp[y * n + x] = acc;
    }
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        const int yy = std::clamp(static_cast<int>(y) + d, 0, last);
        acc += k[d + radius] * tmp[yy * n + x];
      }
      img[y * n + x] = acc;
    }
}

bool draw_sample(const SyntheticConfig& cfg, std::uint64_t seed, Sample& out) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const std::size_t n = cfg.size;
  const double side = static_cast<double>(n);

  std::vector<double> img(n * n, 0.3);
  std::vector<double> offsets(n * n, 0.0);
  if (cfg.texture) {
    const double fy = uniform(0.5, 2.0), fx = uniform(0.5, 2.0), phase = uniform(0.0, 2.0 * std::numbers::pi);
    const double amp = uniform(0.03, 0.08);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        img[y * n + x] += amp * std::sin(2.0 * std::numbers::pi * (fy * y + fx * x) / side + phase);
  }

  std::vector<std::uint8_t> mask(n * n, 0);
  const auto blobs = static_cast<std::size_t>(
      std::floor(uniform(static_cast<double>(cfg.min_blobs), static_cast<double>(cfg.max_blobs) + 1.0)));
  const std::size_t blob_count = std::min(blobs, cfg.max_blobs);
  for (std::size_t b = 0; b < blob_count; ++b) {
    const double cy = uniform(0.2, 0.8) * side, cx = uniform(0.2, 0.8) * side;
    const double ry = uniform(0.08, 0.25) * side, rx = uniform(0.08, 0.25) * side;
    const double angle = uniform(0.0, std::numbers::pi);
    const auto cls = static_cast<std::uint8_t>(
        1 + std::min(static_cast<std::size_t>(unit(rng) * static_cast<double>(cfg.num_classes - 1)), cfg.num_classes - 2));
    const double offset = uniform(cfg.min_offset, cfg.max_offset);
    const double c = std::cos(angle), s = std::sin(angle);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
        if (u * u + v * v <= 1.0) {
          mask[y * n + x] = cls;
          offsets[y * n + x] = offset;  // later blobs overwrite, in the image as in the mask
        }
      }
  }
  for (std::size_t i = 0; i < img.size(); ++i) img[i] += offsets[i];

  const double sigma = uniform(cfg.min_sigma, cfg.max_sigma);
  if (sigma > 0.0) blur(img, n, sigma);
  if (cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (double& v : img) v += noise(rng);
  }

  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) return false;
  out.image = gray_from_bytes(to_bytes(GrayImage{n, n, img}));
  out.mask = LabelImage{n, n, std::move(mask)};
  return true;
}

}  // namespace

Sample generate_sample(const SyntheticConfig& cfg, Split split, std::size_t index) {
  cfg.validate();
  Sample sample;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const std::uint64_t seed =
        derive_seed(cfg.seed, {static_cast<std::uint64_t>(split), index, static_cast<std::uint64_t>(attempt)});
    if (draw_sample(cfg, seed, sample)) return sample;
  }
  throw std::runtime_error("could not draw a sample with foreground for index " + std::to_string(index));
}

std::vector<Sample> generate_samples(const SyntheticConfig& cfg, Split split) {
  std::vector<Sample> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) out.push_back(generate_sample(cfg, split, i));
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

std::string manifest_filename(Split split) { return to_string(split) + "_manifest.tsv"; }

DatasetManifest generate_synthetic(const SyntheticConfig& cfg, Split split, const std::string& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  DatasetManifest manifest{split, out_dir, {}};
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const Sample s = generate_sample(cfg, split, i);
    char stem[64];
    std::snprintf(stem, sizeof stem, "%s_%05zu", to_string(split).c_str(), i);
    ManifestEntry e;
    e.image = std::string(stem) + "_img.pgm";
    e.mask = std::string(stem) + "_mask.pgm";
    const std::string img_bytes = encode_pgm(to_bytes(s.image));
    const std::string mask_bytes = encode_pgm(to_bytes(s.mask));
    write_file((fs::path(out_dir) / e.image).string(), img_bytes);
    write_file((fs::path(out_dir) / e.mask).string(), mask_bytes);
    e.image_sha256 = sha256_hex(img_bytes);
    e.mask_sha256 = sha256_hex(mask_bytes);
    manifest.entries.push_back(std::move(e));
  }
  write_manifest((fs::path(out_dir) / manifest_filename(split)).string(), manifest);
  return manifest;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::string text;
  for (const auto& e : manifest.entries) {
    text += e.image + "\t" + e.mask + "\t" + e.image_sha256 + "\t" + e.mask_sha256 + "\n";
  }
  write_file(path, text);
}

DatasetManifest read_manifest(const std::string& path, Split split, bool verify) {
  std::istringstream in(read_file(path));
  DatasetManifest manifest{split, fs::path(path).parent_path().string(), {}};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected 4 tab-separated fields");
    }
    manifest.entries.push_back({fields[0], fields[1], fields[2], fields[3]});
  }
  if (verify) {
    auto resolve = [&](const std::string& p) { return (fs::path(manifest.base_dir) / p).string(); };
    for (const auto& e : manifest.entries) {
      if (sha256_file(resolve(e.image)) != e.image_sha256) throw IoError("checksum mismatch: " + resolve(e.image));
      if (sha256_file(resolve(e.mask)) != e.mask_sha256) throw IoError("checksum mismatch: " + resolve(e.mask));
    }
  }
  return manifest;
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, std::size_t num_classes) {
  std::vector<Sample> out;
  for (const auto& e : manifest.entries) {
    const auto img = read_pgm((fs::path(manifest.base_dir) / e.image).string());
    const auto mask = read_pgm((fs::path(manifest.base_dir) / e.mask).string());
    if (img.height != mask.height || img.width != mask.width) {
      throw ConfigError("image and mask sizes differ for " + e.image);
    }
    out.push_back({gray_from_bytes(img), labels_from_bytes(mask, num_classes)});
  }
  return out;
}

std::vector<std::size_t> fraction_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must be in (0,1], got " + std::to_string(fraction));
  const auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  if (take == 0) throw ConfigError("fraction " + std::to_string(fraction) + " selects no samples");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  // Explicit Fisher-Yates keeps the order independent of the standard library.
  std::mt19937_64 rng(derive_seed(seed, {0x5e1ec7}));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  order.resize(take);
  return order;
}

DatasetManifest select_fraction(const DatasetManifest& manifest, double fraction, std::uint64_t seed) {
  DatasetManifest out{manifest.split, manifest.base_dir, {}};
  for (auto i : fraction_indices(manifest.entries.size(), fraction, seed)) out.entries.push_back(manifest.entries[i]);
  return out;
}

}  // namespace dragsaw
