#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace cvla {

enum class Variant { stc_src, stc_src_film, no_guidance, stc_only, src_only };
enum class Precision { verify64, fast32 };

std::string to_string(Variant v);
std::string to_string(Precision p);
Variant parse_variant(const std::string& name);
Precision parse_precision(const std::string& name);

/// Shape and behavior of one compressor.
struct CompressionConfig {
  std::size_t d = 8;
  std::size_t k = 16;
  std::size_t w = 2;
  std::size_t h = 16;
  std::size_t width = 16;
  std::size_t views = 2;
  Variant variant = Variant::stc_src;
  Precision precision = Precision::verify64;
  bool identity_projections = false;
  std::uint64_t seed = 0;
  /// Width of the instruction embeddings; 0 means equal to d.
  std::size_t lang_dim = 0;

  std::size_t instruction_width() const { return lang_dim == 0 ? d : lang_dim; }
  std::size_t tokens_per_view() const { return h * width; }
  std::size_t windows_per_view() const { return (h / w) * (width / w); }

  bool uses_stc() const { return variant != Variant::src_only; }
  bool uses_src() const { return variant != Variant::stc_only; }
  bool stc_guided() const { return uses_stc() && variant != Variant::no_guidance; }
  bool src_guided() const { return uses_src() && variant != Variant::no_guidance; }
  /// Local queries are scaled and shifted instead of shifted only.
  bool src_film() const { return variant == Variant::stc_src_film; }

  /// Throws ContractError on zero extents or a window that does not tile the grid.
  void validate() const;

  bool operator==(const CompressionConfig&) const = default;
};

nlohmann::json to_json(const CompressionConfig& config);
/// Strict: unknown fields and wrongly typed values are ContractErrors. Missing fields keep
/// their defaults.
CompressionConfig config_from_json(const nlohmann::json& j);
/// Sorted keys, no whitespace.
std::string canonical_json(const CompressionConfig& config);

/// Parses a config file; unreadable files raise IoError, malformed JSON FormatError.
CompressionConfig load_config(const std::filesystem::path& path);

/// Applies the COMPRESSOR_PRECISION environment override when it is set.
CompressionConfig with_precision_override(CompressionConfig config);

}  // namespace cvla
