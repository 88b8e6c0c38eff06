#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cvla/config.hpp"
#include "cvla/conditioning.hpp"
#include "cvla/gradcheck.hpp"
#include "cvla/src.hpp"
#include "cvla/stc.hpp"

namespace cvla {

inline constexpr std::uint16_t kParamFormatVersion = 1;

/// Every learnable tensor of one compressor. Views share these parameters.
struct CompressorParams {
  StcParams stc;
  SrcParams src;
  CompressionConfig config;
  std::uint16_t version = kParamFormatVersion;
};

struct ViewOutput {
  TensorD z_g;     // [k×D], or [0×D] without the global pathway
  TensorD z_l;     // [N′×D], or [0×D] without the local pathway
  TensorD attn_g;  // [k×N], or [0×N]
  TensorD attn_l;  // [N′×w²], or [0×w²]
};

struct CompressedOutput {
  TensorD z;  // [M×D]: per view, global rows then local rows; views in input order
  std::vector<ViewOutput> views;
};

/// Graph form of one compress call, for gradients and training.
template <typename T>
struct CompressGraph {
  Var<T> z;
  std::vector<std::optional<AttentionVars<T>>> global;
  std::vector<std::optional<AttentionVars<T>>> local;
};

/// V · (k if STC runs + (H/w)(W/w) if SRC runs).
std::size_t token_count(const CompressionConfig& config);

/// Deterministic in seed. FiLM generators start at identity modulation.
CompressorParams init_params(const CompressionConfig& config, std::uint64_t seed);
inline CompressorParams init_params(const CompressionConfig& config) {
  return init_params(config, config.seed);
}

/// Throws ConfigMismatchError when params were built for a different architecture
/// (D, k, instruction width or projection layout).
void require_compatible(const CompressorParams& params, const CompressionConfig& config);

/// Runs in the configured precision; results are widened back to double.
CompressedOutput compress(const CompressorParams& params, const std::vector<FeatureGrid>& views,
                          const InstructionEmbedding& instruction, const CompressionConfig& config);

/// views holds one [H·W×D] token matrix per view; pooled is the pooled instruction.
template <typename T>
CompressGraph<T> compress_graph(const CompressorParams& params, const std::vector<Var<T>>& views,
                                const Var<T>& pooled, const CompressionConfig& config,
                                ParamBinder<T>& bind);

/// Stable names for every stored tensor, in file order.
std::vector<std::pair<std::string, const TensorD*>> named_tensors(const CompressorParams& params);
ParamRefs param_refs(CompressorParams& params);
/// Total stored scalars.
std::size_t parameter_count(const CompressorParams& params);

std::vector<char> serialize_params(const CompressorParams& params);
CompressorParams deserialize_params(std::vector<char> data, const std::string& source);
void save_params(const CompressorParams& params, const std::filesystem::path& path);
CompressorParams load_params(const std::filesystem::path& path);
/// Loads and checks the stored architecture against the requested config.
CompressorParams load_params(const std::filesystem::path& path, const CompressionConfig& expected);

}  // namespace cvla
