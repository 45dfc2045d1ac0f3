#include "dragsaw/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "dragsaw/errors.hpp"
#include "dragsaw/pgm.hpp"

namespace dragsaw {

namespace {

template <typename T>
void put(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return value;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(source_ + ": truncated checkpoint reading " + what + " at byte offset " + std::to_string(pos_));
    }
  }
  const std::string& bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<NamedArray>& arrays) {
  std::string out(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (shape_numel(a.shape) != a.values.size()) throw ContractError("array '" + a.name + "' shape/value mismatch");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put<std::uint64_t>(out, d);
    for (double v : a.values) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

std::vector<NamedArray> decode_checkpoint(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  const std::string magic = r.take(std::min<std::size_t>(4, bytes.size()), "magic");
  if (magic != std::string(kCheckpointMagic, 4)) {
    std::string shown;
    for (char c : magic) shown += (c >= 0x20 && c < 0x7f) ? c : '?';
    throw IoError(source + ": bad checkpoint magic: expected PDSW, found '" + shown + "'");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw IoError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<NamedArray> arrays;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray a;
    a.name = r.take(r.get<std::uint32_t>("name length"), "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw ParseError(source + ": implausible rank at byte offset " + std::to_string(r.pos()));
    for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(r.get<std::uint64_t>("dims"));
    const std::size_t n = shape_numel(a.shape);
    if (n > (bytes.size() - r.pos()) / 8) {
      throw ParseError(source + ": truncated payload for '" + a.name + "' at byte offset " + std::to_string(r.pos()));
    }
    a.values.reserve(n);
    for (std::size_t i = 0; i < n; ++i) a.values.push_back(std::bit_cast<double>(r.get<std::uint64_t>("values")));
    arrays.push_back(std::move(a));
  }
  if (!r.done()) throw ParseError(source + ": trailing bytes at byte offset " + std::to_string(r.pos()));
  return arrays;
}

void write_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays) {
  write_file(path, encode_checkpoint(arrays));
}

std::vector<NamedArray> read_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path), path); }

}  // namespace dragsaw
