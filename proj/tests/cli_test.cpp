#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dragsaw/dataset.hpp"
#include "dragsaw/pgm.hpp"

namespace fs = std::filesystem;
using namespace dragsaw;

namespace {

struct ScratchDir {
  fs::path path;
  ScratchDir() : path(fs::temp_directory_path() / ("dragsaw_cli_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

const fs::path& work_dir() {
  static const ScratchDir dir;
  return dir.path;
}

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args) {
  const auto out = work_dir() / "stdout.txt";
  const std::string cmd = std::string(DRAGSAW_EXE) + " " + args + " > " + out.string() + " 2> " +
                          (work_dir() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out.string())};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::string p(const fs::path& path) { return path.string(); }

const std::string kTinyNet =
    "--set net.encoder_channels=4,4 --set pdcr.taps=1,2 --set data.size=32 --set batch_size=2";

// Tiny dataset shared by several cases.
const fs::path& tiny_data() {
  static const fs::path dir = [] {
    const auto d = work_dir() / "tiny";
    REQUIRE(run("synth --out " + p(d) + " --count 4 --test-count 2 --size 32 --seed 5").code == 0);
    return d;
  }();
  return dir;
}

// Checkpoint of an untrained tiny network (epochs = 0).
const fs::path& untrained_ckpt() {
  static const fs::path ckpt = [] {
    const auto out = work_dir() / "untrained";
    REQUIRE(run("train --data " + p(tiny_data()) + " --out " + p(out) + " " + kTinyNet + " --set epochs=0").code == 0);
    return out / "final.ckpt";
  }();
  return ckpt;
}

std::string config_seed(const fs::path& run_dir) {
  for (const auto& line : lines(read_file(p(run_dir / "config.txt"))))
    if (line.rfind("seed = ", 0) == 0) return line.substr(7);
  return "";
}

}  // namespace

TEST_CASE("synth: size that is not a multiple of 32 is a usage error") {
  CHECK(run("synth --out " + p(work_dir() / "bad") + " --size 63").code == 2);
}

TEST_CASE("synth: count 0 writes empty manifests") {
  const auto d = work_dir() / "empty";
  REQUIRE(run("synth --out " + p(d) + " --count 0 --test-count 0 --size 32").code == 0);
  CHECK(read_manifest(p(d / manifest_filename(Split::kTrain)), Split::kTrain).entries.empty());
  CHECK(read_manifest(p(d / manifest_filename(Split::kTest)), Split::kTest).entries.empty());
}

TEST_CASE("synth: repeated generation gives identical checksums") {
  const auto a = work_dir() / "rep_a", b = work_dir() / "rep_b";
  REQUIRE(run("synth --out " + p(a) + " --count 3 --size 32 --seed 9").code == 0);
  REQUIRE(run("synth --out " + p(b) + " --count 3 --size 32 --seed 9").code == 0);
  const auto ma = read_manifest(p(a / manifest_filename(Split::kTrain)), Split::kTrain);
  const auto mb = read_manifest(p(b / manifest_filename(Split::kTrain)), Split::kTrain);
  REQUIRE(ma.entries.size() == 3);
  REQUIRE(mb.entries.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(ma.entries[i].image_sha256 == mb.entries[i].image_sha256);
    CHECK(ma.entries[i].mask_sha256 == mb.entries[i].mask_sha256);
  }
}

TEST_CASE("unknown config key is a usage error") {
  CHECK(run("rf --set no.such.key=1").code == 2);
}

TEST_CASE("unknown flag is a usage error") { CHECK(run("rf --bogus").code == 2); }

TEST_CASE("checkpoint with a bad magic is a runtime error") {
  const auto bad = work_dir() / "bad.ckpt";
  write_file(p(bad), "NOPE\x01\x00\x00\x00\x00\x00\x00\x00");
  const auto img = tiny_data() / "test_00000_img.pgm";
  CHECK(run("uncertainty --checkpoint " + p(bad) + " --image " + p(img) + " --out " + p(work_dir() / "u")).code == 1);
}

TEST_CASE("missing input file is a runtime error") {
  CHECK(run("eval --checkpoint " + p(work_dir() / "absent.ckpt") + " --data " + p(tiny_data())).code == 1);
}

TEST_CASE("rf: receptive fields grow strictly with depth") {
  const Run r = run("rf");
  REQUIRE(r.code == 0);
  const auto rows = lines(r.out);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0] == "block,rf,jump,start");
  long prev = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::istringstream in(rows[i]);
    std::string block, rf;
    std::getline(in, block, ',');
    std::getline(in, rf, ',');
    CHECK(std::stol(block) == static_cast<long>(i));
    CHECK(std::stol(rf) > prev);
    prev = std::stol(rf);
  }
}

TEST_CASE("affinity: constant and diagonal variants") {
  const auto mask = tiny_data() / "train_00000_mask.pgm";
  const auto csv = work_dir() / "aff.csv";
  for (const std::string variant : {"constant", "diagonal"}) {
    REQUIRE(run("affinity --mask " + p(mask) + " --block 2 --n 16 --variant " + variant + " --out " + p(csv)).code == 0);
    const auto rows = lines(read_file(p(csv)));
    REQUIRE(rows.size() == 1 + 16 * 16);
    CHECK(rows[0] == "i,j,w_ij");
    for (std::size_t r = 1; r < rows.size(); ++r) {
      std::istringstream in(rows[r]);
      std::string i, j, w;
      std::getline(in, i, ',');
      std::getline(in, j, ',');
      std::getline(in, w);
      const double expected = variant == "constant" ? 0.5 : (i == j ? 1.0 : 0.0);
      CHECK(std::stod(w) == expected);
    }
  }
}

TEST_CASE("uncertainty: an untrained network is uniformly uncertain") {
  const auto out = work_dir() / "unc";
  const Run r = run("uncertainty --checkpoint " + p(untrained_ckpt()) + " --image " +
                    p(tiny_data() / "test_00000_img.pgm") + " --out " + p(out));
  REQUIRE(r.code == 0);
  const auto paths = lines(r.out);
  CHECK(paths.size() == 4);  // enc1, enc2, dec1, dec2
  std::set<std::string> names;
  for (const auto& path : paths) {
    names.insert(fs::path(path).stem().string());
    const ByteImage img = read_pgm(path);
    CHECK(img.height * img.width > 0);
    for (auto b : img.bytes) CHECK(b == 255);
  }
  CHECK(names == std::set<std::string>{"enc1", "enc2", "dec1", "dec2"});
}

TEST_CASE("embeddings: one row per block and sample, vectors of channel width") {
  const auto csv = work_dir() / "emb.csv";
  REQUIRE(run("embeddings --checkpoint " + p(untrained_ckpt()) + " --image " +
              p(tiny_data() / "test_00000_img.pgm") + " --blocks 1,2 --n 16 --out " + p(csv))
              .code == 0);
  const auto rows = lines(read_file(p(csv)));
  REQUIRE(rows.size() == 1 + 2 * 16);
  CHECK(rows[0] == "block,i,y,x,vector");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto vec = rows[r].substr(rows[r].rfind(',') + 1);
    std::istringstream in(vec);
    std::size_t dim = 0;
    for (double v; in >> v;) ++dim;
    CHECK(dim == 4);
  }
}

TEST_CASE("eval: per-sample CSV") {
  const auto csv = work_dir() / "eval.csv";
  const Run r = run("eval --checkpoint " + p(untrained_ckpt()) + " --data " + p(tiny_data()) + " --out " + p(csv));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("samples 2") != std::string::npos);
  const auto rows = lines(read_file(p(csv)));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == "sample,ja,di,ac");
}

TEST_CASE("train: configuration precedence") {
  const auto cfg_file = work_dir() / "run.cfg";
  write_file(p(cfg_file), "seed = 9\nepochs = 0\n");
  const std::string base = "train --data " + p(tiny_data()) + " " + kTinyNet + " --out ";
  ::setenv("DRAGSAW_SEED", "7", 1);

  const auto env_only = work_dir() / "prec_env";
  REQUIRE(run(base + p(env_only) + " --set epochs=0").code == 0);
  CHECK(config_seed(env_only) == "7");

  const auto file = work_dir() / "prec_file";
  REQUIRE(run(base + p(file) + " --config " + p(cfg_file)).code == 0);
  CHECK(config_seed(file) == "9");

  const auto set = work_dir() / "prec_set";
  REQUIRE(run(base + p(set) + " --config " + p(cfg_file) + " --set seed=11").code == 0);
  CHECK(config_seed(set) == "11");
  ::unsetenv("DRAGSAW_SEED");

  const auto flag = work_dir() / "prec_flag";
  const Run r = run(base + p(flag) + " --set epochs=0 --set pdcr.lambda=0.5 --no-pdcr --no-uafs");
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("configuration baseline", 0) == 0);
}
