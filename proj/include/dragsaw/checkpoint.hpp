#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dragsaw/network.hpp"

namespace dragsaw {

inline constexpr char kCheckpointMagic[4] = {'P', 'D', 'S', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout, all little-endian: magic, u32 version, u32 count, then per array
/// u32 name length, name bytes, u32 rank, u64 dims, f64 values.
std::string encode_checkpoint(const std::vector<NamedArray>& arrays);
std::vector<NamedArray> decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>");

void write_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_checkpoint(const std::string& path);

}  // namespace dragsaw
