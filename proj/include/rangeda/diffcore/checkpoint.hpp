#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "rangeda/diffcore/tensor.hpp"

namespace rangeda {

// Binary parameter file:
//   magic "RGDACKPT" | u32 version | u32 count |
//   count x { u32 name_len | name | u32 rank | i64 dims[rank] | f32 data[numel] }
// All integers and floats little-endian.
inline constexpr char kCheckpointMagic[8] = {'R', 'G', 'D', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using TensorMap = std::map<std::string, Tensor<float>>;

void save_tensors(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_tensors(const std::filesystem::path& path);

}  // namespace rangeda
