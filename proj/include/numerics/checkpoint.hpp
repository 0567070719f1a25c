#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "numerics/tensor.hpp"

namespace numerics::checkpoint {

// Flat binary container of named tensors. Layout:
//   magic "MMBLCKPT" (8 bytes), version byte 0x01, then per record:
//   u32 name length | UTF-8 name | u32 rank | u64 extents[rank] |
//   raw little-endian f64 payload.
// Doubles round-trip bit-exactly (payload copied as bytes).

inline constexpr char kMagic[8] = {'M', 'M', 'B', 'L', 'C', 'K', 'P', 'T'};
inline constexpr unsigned char kVersion = 0x01;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_records(std::ostream& os, const NamedTensors& records);
NamedTensors read_records(std::istream& is);

void save_file(const std::filesystem::path& path, const NamedTensors& records);
NamedTensors load_file(const std::filesystem::path& path);

}  // namespace numerics::checkpoint
