#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "loopsr/numgrad/param_set.hpp"

namespace loopsr::numgrad {

// Weights file: "LSRW", u32 version, u32 tensor count, then per tensor
// (u32 name length, name bytes, u32 rank, u64 dims[rank], f64 payload), all
// little-endian.
inline constexpr std::uint32_t kWeightsVersion = 1;

std::vector<std::uint8_t> encode_weights(const ParamSet& params);
ParamSet decode_weights(std::span<const std::uint8_t> bytes);

void save_weights(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_weights(const std::filesystem::path& path);

}  // namespace loopsr::numgrad
