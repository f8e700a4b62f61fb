#pragma once

#include <filesystem>
#include <vector>

#include "d3t/detector.hpp"

namespace d3t {

// Checkpoint bytes:
//   "D3T1"
//   u32 LE  length of the arch JSON
//   arch config as canonical JSON (sorted keys, no whitespace)
//   u64 LE  value count
//   value count x f32 LE
// Values are stored as f32; loading widens them back to double.

struct Checkpoint {
    ArchConfig arch;
    ParamVector params;
};

std::vector<unsigned char> encode_checkpoint(const ArchConfig& arch, const ParamVector& params);
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(const std::filesystem::path& path, const ArchConfig& arch,
                     const ParamVector& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace d3t
