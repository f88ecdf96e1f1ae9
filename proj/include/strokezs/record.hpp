#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "strokezs/tensor.hpp"

namespace strokezs {

// Little-endian named-tensor container shared by checkpoints, stored images
// and support banks:
//   "SZS1" | version u32 | count u32 |
//   per tensor: name_len u16 | name | rank u8 | dims u32[rank] | f32[size]
inline constexpr char kRecordMagic[4] = {'S', 'Z', 'S', '1'};
inline constexpr std::uint32_t kRecordVersion = 1;

using NamedTensor = std::pair<std::string, nn::Tensor>;

std::string encode_records(const std::vector<NamedTensor>& tensors);
// Throws DataError on bad magic, unsupported version or truncation.
std::vector<NamedTensor> decode_records(const std::string& bytes);

void write_records(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_records(const std::string& path);

}  // namespace strokezs
