#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "d3t/synthgen.hpp"

namespace d3t {

// On-disk layout, one pair of files per sample:
//   sample_<id>.scn   16-byte header ("SCN1", H, W, C as u16 LE, 6 zero bytes)
//                     followed by H*W*C little-endian f32, row-major.
//   sample_<id>.json  {"sample_id", "domain", "objects": [{"class_id", "box": [cx,cy,w,h]}]}

std::vector<unsigned char> encode_image(const Image& image);
Image decode_image(std::span<const unsigned char> bytes);

void save_dataset(const std::filesystem::path& dir, std::span<const SceneSample> samples);
/// Loads every sample_*.scn in `dir`, ordered by sample id.
std::vector<SceneSample> load_dataset(const std::filesystem::path& dir);

}  // namespace d3t
