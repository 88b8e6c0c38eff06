#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cvla/config.hpp"
#include "cvla/pipeline.hpp"

namespace cvla {

inline constexpr int kGrayLevels = 16;

/// Row-major gray levels in [0, 15], mapped linearly from the map's min (0) to max (15).
/// A constant map is all zeros.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
  double min = 0.0;
  double max = 0.0;
};

/// map is [rows×cols].
GrayImage quantize(const TensorD& map);
/// Binary P5 graymap with maxval 15; the comment line records the value range.
std::vector<char> encode_pgm(const GrayImage& image);

/// Places each window's w² weights back at the window's grid position: [N′×w²] → [H×W].
TensorD tile_local_attention(const TensorD& attn_l, std::size_t h, std::size_t w_grid,
                             std::size_t window);

/// Writes view{v}_query{q}.pgm (H×W per global query) and view{v}_local.pgm (tiled local
/// weights) for every view. Returns the written paths.
std::vector<std::filesystem::path> export_attention(const CompressedOutput& output,
                                                    const CompressionConfig& config,
                                                    const std::filesystem::path& dir);

}  // namespace cvla
