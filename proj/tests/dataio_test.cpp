#include <doctest.h>

#include <filesystem>
#include <set>

#include "dragsaw/checkpoint.hpp"
#include "dragsaw/dataset.hpp"
#include "dragsaw/errors.hpp"
#include "dragsaw/pgm.hpp"

using namespace dragsaw;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("dragsaw_dataio_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("quantization rounds halves up") {
  const GrayImage img{2, 2, {0.0, 1.0, 0.5, 0.25}};
  const ByteImage raw = to_bytes(img);
  CHECK(raw.bytes == std::vector<std::uint8_t>{0, 255, 128, 64});
  const std::string encoded = encode_pgm(raw);
  CHECK(encoded.substr(0, 11) == "P5\n2 2\n255\n");
  CHECK(encoded.size() == 15);
}

TEST_CASE("pgm round trip is lossless") {
  const auto dir = scratch("roundtrip");
  ByteImage raw{3, 5, {}};
  for (int i = 0; i < 15; ++i) raw.bytes.push_back(static_cast<std::uint8_t>(i * 17));
  write_pgm((dir / "a.pgm").string(), raw);
  CHECK(read_pgm((dir / "a.pgm").string()) == raw);
  CHECK(to_bytes(gray_from_bytes(raw)) == raw);
}

TEST_CASE("strict pgm parsing") {
  const std::string good = encode_pgm({2, 2, {1, 2, 3, 4}});
  CHECK_THROWS_AS(decode_pgm(good.substr(0, good.size() - 1)), ParseError);
  CHECK_THROWS_AS(decode_pgm(good + "x"), ParseError);
  CHECK_THROWS_AS(decode_pgm("P2\n2 2\n255\n1234"), ParseError);
  CHECK_THROWS_AS(decode_pgm("P5\n2 2\n65535\n1234"), ParseError);
  CHECK_THROWS_AS(decode_pgm("P5\n2 x\n255\n1234"), ParseError);
  try {
    decode_pgm(good.substr(0, good.size() - 1), "cut.pgm");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  // Any whitespace between header fields is allowed.
  CHECK(decode_pgm("P5 2\t2\n\n255 \x01\x02\x03\x04").bytes == std::vector<std::uint8_t>{1, 2, 3, 4});
}

TEST_CASE("mask bytes must be valid classes") {
  CHECK_THROWS_AS(labels_from_bytes({1, 2, {0, 2}}, 2), ConfigError);
  CHECK(labels_from_bytes({1, 2, {0, 1}}, 2).labels == std::vector<std::uint8_t>{0, 1});
}

TEST_CASE("synthetic samples are deterministic and always have foreground") {
  SyntheticConfig cfg;
  cfg.count = 12;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const Sample a = generate_sample(cfg, Split::kTrain, i);
    const Sample b = generate_sample(cfg, Split::kTrain, i);
    CHECK(a.image.pixels == b.image.pixels);
    CHECK(a.mask.labels == b.mask.labels);
    std::size_t fg = 0;
    for (auto v : a.mask.labels) fg += v != 0;
    CHECK(fg > 0);
    for (double v : a.image.pixels) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK(generate_sample(cfg, Split::kTrain, 0).mask.labels != generate_sample(cfg, Split::kTest, 0).mask.labels);
}

TEST_CASE("without blur and noise the image is piecewise constant along the mask") {
  SyntheticConfig cfg;
  cfg.count = 6;
  cfg.min_sigma = cfg.max_sigma = 0.0;
  cfg.noise_sigma = 0.0;
  cfg.texture = false;
  cfg.num_classes = 3;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const Sample s = generate_sample(cfg, Split::kTrain, i);
    const std::size_t n = cfg.size;
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        if (s.mask.at(y, x) == 0) CHECK(s.image.at(y, x) == quantize(0.3) / 255.0);
        if (x + 1 < n && s.image.at(y, x) != s.image.at(y, x + 1)) {
          // Every intensity step sits on a mask boundary.
          CHECK(s.mask.at(y, x) != s.mask.at(y, x + 1));
        }
        if (x + 1 < n && s.mask.at(y, x) == 0 && s.mask.at(y, x + 1) == 0) {
          CHECK(s.image.at(y, x) == s.image.at(y, x + 1));
        }
      }
  }
}

TEST_CASE("size must suit the network") {
  SyntheticConfig cfg;
  cfg.size = 63;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("generated files, manifests and checksums") {
  const auto dir = scratch("synth");
  SyntheticConfig cfg;
  cfg.count = 3;
  const auto m = generate_synthetic(cfg, Split::kTrain, dir.string());
  REQUIRE(m.entries.size() == 3);
  const auto back = read_manifest((dir / manifest_filename(Split::kTrain)).string(), Split::kTrain);
  CHECK(back.entries == m.entries);
  const auto samples = load_samples(back, 2);
  CHECK(samples[1].mask.labels == generate_sample(cfg, Split::kTrain, 1).mask.labels);
  CHECK(samples[1].image.pixels == generate_sample(cfg, Split::kTrain, 1).image.pixels);

  // Same flags again: identical bytes.
  const auto dir2 = scratch("synth2");
  const auto m2 = generate_synthetic(cfg, Split::kTrain, dir2.string());
  CHECK(m2.entries == m.entries);

  // Tampering is caught.
  write_file((dir / m.entries[0].image).string(), "P5\n1 1\n255\n\x07");
  CHECK_THROWS_AS(read_manifest((dir / manifest_filename(Split::kTrain)).string(), Split::kTrain), IoError);
}

TEST_CASE("empty dataset writes an empty manifest and nothing else") {
  const auto dir = scratch("empty");
  SyntheticConfig cfg;
  cfg.count = 0;
  const auto m = generate_synthetic(cfg, Split::kTrain, dir.string());
  CHECK(m.entries.empty());
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
  CHECK(files == 1);
}

TEST_CASE("fraction selection nests and depends on the seed") {
  const auto all = fraction_indices(400, 1.0, 42);
  CHECK(all.size() == 400);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 400);
  const auto quarter = fraction_indices(400, 0.25, 42);
  const auto half = fraction_indices(400, 0.5, 42);
  CHECK(quarter.size() == 100);
  CHECK(std::equal(quarter.begin(), quarter.end(), half.begin()));
  CHECK(fraction_indices(400, 0.05, 42).size() == 20);
  CHECK(fraction_indices(10, 0.01, 42).size() == 1);
  CHECK(fraction_indices(10, 1.0, 1) != fraction_indices(10, 1.0, 2));
  CHECK_THROWS_AS(fraction_indices(0, 0.5, 1), ConfigError);
  CHECK_THROWS_AS(fraction_indices(10, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(fraction_indices(10, 1.5, 1), ConfigError);
}

TEST_CASE("checkpoint bytes survive write, read, write") {
  const auto dir = scratch("ckpt");
  const std::vector<NamedArray> arrays{{"a.weight", {2, 1, 1, 2}, {1.5, -0.0, 1e-300, 3.25}},
                                       {"a.running_var", {1}, {0.125}}};
  write_checkpoint((dir / "one.ckpt").string(), arrays);
  const auto back = read_checkpoint((dir / "one.ckpt").string());
  write_checkpoint((dir / "two.ckpt").string(), back);
  CHECK(read_file((dir / "one.ckpt").string()) == read_file((dir / "two.ckpt").string()));
  const std::string bytes = encode_checkpoint(arrays);
  CHECK(bytes.substr(0, 4) == "PDSW");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 2);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
  try {
    decode_checkpoint("XXXX" + bytes.substr(4));
    FAIL("expected magic error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("expected PDSW, found 'XXXX'") != std::string::npos);
  }
}
