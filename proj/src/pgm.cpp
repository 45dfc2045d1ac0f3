#include "dragsaw/pgm.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dragsaw/errors.hpp"

namespace dragsaw {

std::uint8_t quantize(double v) {
  const double q = std::floor(255.0 * v + 0.5);
  if (!(q > 0.0)) return 0;
  if (q >= 255.0) return 255;
  return static_cast<std::uint8_t>(q);
}

ByteImage to_bytes(const GrayImage& image) {
  ByteImage out{image.height, image.width, {}};
  out.bytes.reserve(image.pixels.size());
  for (double v : image.pixels) out.bytes.push_back(quantize(v));
  return out;
}

ByteImage to_bytes(const LabelImage& mask) { return {mask.height, mask.width, mask.labels}; }

GrayImage gray_from_bytes(const ByteImage& raw) {
  GrayImage out{raw.height, raw.width, {}};
  out.pixels.reserve(raw.bytes.size());
  for (auto b : raw.bytes) out.pixels.push_back(b / 255.0);
  return out;
}

LabelImage labels_from_bytes(const ByteImage& raw, std::size_t num_classes) {
  for (std::size_t i = 0; i < raw.bytes.size(); ++i) {
    if (raw.bytes[i] >= num_classes) {
      throw ConfigError("mask value " + std::to_string(raw.bytes[i]) + " at pixel " + std::to_string(i) +
                        " is not below num_classes " + std::to_string(num_classes));
    }
  }
  return {raw.height, raw.width, raw.bytes};
}

std::string encode_pgm(const ByteImage& image) {
  if (image.bytes.size() != image.height * image.width) throw ContractError("ByteImage size mismatch");
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.bytes.data()), image.bytes.size());
  return out;
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderReader {
 public:
  HeaderReader(const std::string& data, const std::string& source) : data_(data), source_(source) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(source_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }

  void expect_magic() {
    if (data_.size() < 2 || data_[0] != 'P' || data_[1] != '5') fail("missing P5 magic");
    pos_ = 2;
  }

  void skip_whitespace() {
    const std::size_t start = pos_;
    while (pos_ < data_.size() && is_space(data_[pos_])) ++pos_;
    if (pos_ == start) fail("expected whitespace");
  }

  std::size_t number() {
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < data_.size() && data_[pos_] >= '0' && data_[pos_] <= '9') {
      value = value * 10 + static_cast<std::size_t>(data_[pos_] - '0');
      if (value > (1u << 24)) fail("header number too large");
      ++pos_;
    }
    if (pos_ == start) fail("expected decimal number");
    return value;
  }

  void single_whitespace() {
    if (pos_ >= data_.size() || !is_space(data_[pos_])) fail("expected single whitespace before raster");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::string& data_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

ByteImage decode_pgm(const std::string& data, const std::string& source) {
  HeaderReader r(data, source);
  r.expect_magic();
  r.skip_whitespace();
  const std::size_t width = r.number();
  r.skip_whitespace();
  const std::size_t height = r.number();
  r.skip_whitespace();
  if (r.number() != 255) r.fail("maxval must be 255");
  r.single_whitespace();
  const std::size_t payload = width * height;
  const std::size_t available = data.size() - r.pos();
  if (available < payload) {
    throw ParseError(source + ": short payload, expected " + std::to_string(payload) + " bytes but file ends at byte offset " +
                     std::to_string(data.size()));
  }
  if (available > payload) {
    throw ParseError(source + ": trailing data at byte offset " + std::to_string(r.pos() + payload));
  }
  ByteImage out{height, width, std::vector<std::uint8_t>(payload)};
  for (std::size_t i = 0; i < payload; ++i) out.bytes[i] = static_cast<std::uint8_t>(data[r.pos() + i]);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path);
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("write failed: " + path);
}

void write_pgm(const std::string& path, const ByteImage& image) { write_file(path, encode_pgm(image)); }

ByteImage read_pgm(const std::string& path) { return decode_pgm(read_file(path), path); }

}  // namespace dragsaw
