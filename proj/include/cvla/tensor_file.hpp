#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cvla/tensor.hpp"

namespace cvla {

/// CTF1 layout: magic "CTF1", rank u8, dims u32 ×rank, then f32 payload, all little-endian,
/// row-major, no trailing bytes.
std::vector<char> encode_ctf(const TensorF& tensor);
/// Throws FormatError on bad magic, truncation or trailing bytes.
TensorF decode_ctf(std::vector<char> data, const std::string& source);

void write_ctf(const std::filesystem::path& path, const TensorF& tensor);
TensorF read_ctf(const std::filesystem::path& path);

}  // namespace cvla
