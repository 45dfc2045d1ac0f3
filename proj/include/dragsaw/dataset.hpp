#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dragsaw/image.hpp"

namespace dragsaw {

enum class Split { kTrain, kTest };
std::string to_string(Split split);

struct SyntheticConfig {
  std::size_t count = 400;
  std::size_t size = 64;
  std::size_t num_classes = 2;
  std::size_t min_blobs = 1;
  std::size_t max_blobs = 3;
  double min_offset = 0.2;
  double max_offset = 0.5;
  double min_sigma = 0.5;
  double max_sigma = 2.0;
  double noise_sigma = 0.05;
  bool texture = true;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Side length must be a multiple of this (five stride-2 encoder blocks).
inline constexpr std::size_t kSizeMultiple = 32;

/// Draws sample `index` of a split. The image is already quantized to 8 bits,
/// so it equals what a PGM round trip would give back.
Sample generate_sample(const SyntheticConfig& cfg, Split split, std::size_t index);
std::vector<Sample> generate_samples(const SyntheticConfig& cfg, Split split);

struct ManifestEntry {
  std::string image;  // path as written in the manifest
  std::string mask;
  std::string image_sha256;
  std::string mask_sha256;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  Split split = Split::kTrain;
  std::string base_dir;  // relative entry paths resolve against this
  std::vector<ManifestEntry> entries;
};

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

/// Writes `<split>_NNNNN_img.pgm` / `_mask.pgm` files and
/// `<split>_manifest.tsv` into out_dir.
DatasetManifest generate_synthetic(const SyntheticConfig& cfg, Split split, const std::string& out_dir);

std::string manifest_filename(Split split);
void write_manifest(const std::string& path, const DatasetManifest& manifest);
/// Reads `image\tmask\tsha\tsha` lines. With verify set, checksums are recomputed.
DatasetManifest read_manifest(const std::string& path, Split split, bool verify = true);
std::vector<Sample> load_samples(const DatasetManifest& manifest, std::size_t num_classes);

/// Seeded shuffle of 0..n-1 truncated to ceil(fraction n). Smaller fractions
/// under the same seed give prefixes of larger ones.
std::vector<std::size_t> fraction_indices(std::size_t n, double fraction, std::uint64_t seed);
DatasetManifest select_fraction(const DatasetManifest& manifest, double fraction, std::uint64_t seed);

}  // namespace dragsaw
