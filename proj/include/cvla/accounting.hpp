#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "cvla/config.hpp"

namespace cvla {

/// Downstream consumer cost: fixed + linear·M + pair·M², plus the compressor's own FLOPs
/// scaled by compressor_weight.
struct CostModel {
  double fixed_cost = 0.0;
  double per_token_linear_cost = 0.0;
  double per_token_pair_cost = 0.0;
  double compressor_weight = 1.0;

  /// Throws ContractError on negative or non-finite coefficients.
  void validate() const;
  double consumer_flops(std::size_t tokens) const;
};

struct FlopsReport {
  CompressionConfig config;
  std::size_t tokens_baseline = 0;
  std::size_t tokens_compressed = 0;
  double flops_baseline = 0.0;
  double flops_compressed = 0.0;
  double ratio = 0.0;
};

/// Exact FLOPs of one compress call, counted with the same conventions as the kernels:
/// a multiply-accumulate is 2, elementwise ops 1, softmax 5 and gelu 8 per element.
std::uint64_t compressor_flops(const CompressionConfig& config, std::size_t instruction_tokens = 1);

/// Baseline feeds all V·H·W tokens to the consumer; compressed feeds token_count(config) and
/// pays for the compressor.
FlopsReport pipeline_flops(const CostModel& model, const CompressionConfig& config,
                           std::size_t instruction_tokens = 1);

nlohmann::json to_json(const FlopsReport& report);
/// {config, tokens_baseline, tokens_compressed}
nlohmann::json tokens_report(const CompressionConfig& config);

nlohmann::json to_json(const CostModel& model);
/// Strict like the config parser.
CostModel cost_model_from_json(const nlohmann::json& j);
CostModel load_cost_model(const std::filesystem::path& path);

}  // namespace cvla
