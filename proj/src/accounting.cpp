#include "cvla/accounting.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "cvla/errors.hpp"
#include "cvla/ops.hpp"
#include "cvla/pipeline.hpp"

namespace cvla {

using nlohmann::json;

void CostModel::validate() const {
  for (const auto& [value, name] :
       {std::pair{fixed_cost, "fixed_cost"}, std::pair{per_token_linear_cost, "per_token_linear_cost"},
        std::pair{per_token_pair_cost, "per_token_pair_cost"},
        std::pair{compressor_weight, "compressor_weight"}}) {
    if (!std::isfinite(value) || value < 0.0) {
      throw ContractError(std::string("cost model field ") + name + " must be finite and >= 0");
    }
  }
}

double CostModel::consumer_flops(std::size_t tokens) const {
  const double m = static_cast<double>(tokens);
  return fixed_cost + per_token_linear_cost * m + per_token_pair_cost * m * m;
}

std::uint64_t compressor_flops(const CompressionConfig& config, std::size_t instruction_tokens) {
  config.validate();
  using u64 = std::uint64_t;
  const u64 d = config.d, k = config.k, lang = config.instruction_width();
  const u64 n = config.tokens_per_view(), windows = config.windows_per_view();
  const u64 s = config.w * config.w;
  const bool proj = !config.identity_projections;
  // One D→D projection over `rows` rows.
  auto projection = [&](u64 rows) { return proj ? 2 * rows * d * d + rows * d : 0; };
  // Keys carry no bias.
  auto key_projection = [&](u64 rows) { return proj ? 2 * rows * d * d : 0; };
  auto affine = [](u64 in, u64 out) { return 2 * in * out + out; };

  u64 total = lang * instruction_tokens;  // pooling
  if (config.stc_guided()) {
    total += affine(lang, 2 * d) + kGeluFlopsPerElement * 2 * d + affine(2 * d, d);
    total += affine(d, 2 * k * d);
    total += 2 * k * d;  // γ ⊙ Q + β
  }
  if (config.src_guided()) total += config.src_film() ? affine(lang, 2 * d) : affine(lang, d);

  u64 per_view = 0;
  if (config.uses_stc()) {
    per_view += projection(k) + key_projection(n) + projection(n);
    per_view += 2 * k * n * d + k * n + kSoftmaxFlopsPerElement * k * n + 2 * k * n * d;
    per_view += projection(k);
  }
  if (config.uses_src()) {
    per_view += windows * d * s;  // window means
    if (config.src_guided()) per_view += (config.src_film() ? 2 : 1) * windows * d;
    per_view += projection(windows) + key_projection(n) + projection(n);
    per_view += 2 * windows * s * d + windows * s + kSoftmaxFlopsPerElement * windows * s +
                2 * windows * s * d;
    per_view += projection(windows);
  }
  return total + config.views * per_view;
}

FlopsReport pipeline_flops(const CostModel& model, const CompressionConfig& config,
                           std::size_t instruction_tokens) {
  model.validate();
  FlopsReport r;
  r.config = config;
  r.tokens_baseline = config.views * config.tokens_per_view();
  r.tokens_compressed = token_count(config);
  r.flops_baseline = model.consumer_flops(r.tokens_baseline);
  r.flops_compressed =
      model.consumer_flops(r.tokens_compressed) +
      model.compressor_weight * static_cast<double>(compressor_flops(config, instruction_tokens));
  r.ratio = r.flops_baseline > 0.0 ? r.flops_compressed / r.flops_baseline : 0.0;
  return r;
}

json to_json(const FlopsReport& r) {
  return json{{"config", to_json(r.config)},
              {"tokens_baseline", r.tokens_baseline},
              {"tokens_compressed", r.tokens_compressed},
              {"flops_baseline", r.flops_baseline},
              {"flops_compressed", r.flops_compressed},
              {"ratio", r.ratio}};
}

json tokens_report(const CompressionConfig& config) {
  return json{{"config", to_json(config)},
              {"tokens_baseline", config.views * config.tokens_per_view()},
              {"tokens_compressed", token_count(config)}};
}

json to_json(const CostModel& m) {
  return json{{"fixed_cost", m.fixed_cost},
              {"per_token_linear_cost", m.per_token_linear_cost},
              {"per_token_pair_cost", m.per_token_pair_cost},
              {"compressor_weight", m.compressor_weight}};
}

CostModel cost_model_from_json(const json& j) {
  if (!j.is_object()) throw ContractError("cost model must be a JSON object");
  CostModel m;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number()) throw ContractError("cost model field " + key + " must be a number");
    const double v = value.get<double>();
    if (key == "fixed_cost") m.fixed_cost = v;
    else if (key == "per_token_linear_cost") m.per_token_linear_cost = v;
    else if (key == "per_token_pair_cost") m.per_token_pair_cost = v;
    else if (key == "compressor_weight") m.compressor_weight = v;
    else throw ContractError("unknown cost model field '" + key + "'");
  }
  m.validate();
  return m;
}

CostModel load_cost_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open cost model file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return cost_model_from_json(json::parse(buffer.str()));
  } catch (const json::parse_error& e) {
    throw FormatError("cost model file " + path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace cvla
