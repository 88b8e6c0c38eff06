#include "cvla/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cvla/errors.hpp"
#include "cvla/src.hpp"

namespace cvla {

using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::stc_src: return "stc_src";
    case Variant::stc_src_film: return "stc_src_film";
    case Variant::no_guidance: return "no_guidance";
    case Variant::stc_only: return "stc_only";
    case Variant::src_only: return "src_only";
  }
  return "unknown";
}

std::string to_string(Precision p) { return p == Precision::verify64 ? "verify64" : "fast32"; }

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::stc_src, Variant::stc_src_film, Variant::no_guidance,
                    Variant::stc_only, Variant::src_only}) {
    if (to_string(v) == name) return v;
  }
  throw ContractError("unknown variant '" + name +
                      "' (expected stc_src, stc_src_film, no_guidance, stc_only or src_only)");
}

Precision parse_precision(const std::string& name) {
  if (name == "verify64") return Precision::verify64;
  if (name == "fast32") return Precision::fast32;
  throw ContractError("unknown precision '" + name + "' (expected verify64 or fast32)");
}

void CompressionConfig::validate() const {
  auto positive = [](std::size_t value, const char* field) {
    if (value == 0) throw ContractError(std::string("config field ") + field + " must be >= 1");
  };
  positive(d, "D");
  positive(k, "k");
  positive(h, "H");
  positive(width, "W");
  positive(views, "views");
  require_window(h, width, w);
}

json to_json(const CompressionConfig& c) {
  return json{{"D", c.d},
              {"k", c.k},
              {"w", c.w},
              {"H", c.h},
              {"W", c.width},
              {"views", c.views},
              {"variant", to_string(c.variant)},
              {"precision", to_string(c.precision)},
              {"identity_projections", c.identity_projections},
              {"seed", c.seed},
              {"lang_dim", c.instruction_width()}};
}

namespace {

std::size_t count_field(const json& value, const std::string& key) {
  if (!value.is_number_unsigned()) {
    throw ContractError("config field " + key + " must be a non-negative integer");
  }
  return value.get<std::size_t>();
}

}  // namespace

CompressionConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ContractError("config must be a JSON object");
  CompressionConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "D") c.d = count_field(value, key);
    else if (key == "k") c.k = count_field(value, key);
    else if (key == "w") c.w = count_field(value, key);
    else if (key == "H") c.h = count_field(value, key);
    else if (key == "W") c.width = count_field(value, key);
    else if (key == "views") c.views = count_field(value, key);
    else if (key == "seed") c.seed = count_field(value, key);
    else if (key == "lang_dim") c.lang_dim = count_field(value, key);
    else if (key == "variant" || key == "precision") {
      if (!value.is_string()) throw ContractError("config field " + key + " must be a string");
      if (key == "variant") c.variant = parse_variant(value.get<std::string>());
      else c.precision = parse_precision(value.get<std::string>());
    } else if (key == "identity_projections") {
      if (!value.is_boolean()) throw ContractError("config field " + key + " must be a boolean");
      c.identity_projections = value.get<bool>();
    } else {
      throw ContractError("unknown config field '" + key + "'");
    }
  }
  if (c.lang_dim == c.d) c.lang_dim = 0;
  c.validate();
  return c;
}

std::string canonical_json(const CompressionConfig& config) { return to_json(config).dump(); }

CompressionConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  json j;
  try {
    j = json::parse(buffer.str());
  } catch (const json::parse_error& e) {
    throw FormatError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

CompressionConfig with_precision_override(CompressionConfig config) {
  if (const char* env = std::getenv("COMPRESSOR_PRECISION"); env && *env) {
    config.precision = parse_precision(env);
  }
  return config;
}

}  // namespace cvla
