#include "cvla/pipeline.hpp"

#include <cmath>
#include <set>

#include "cvla/binary_io.hpp"
#include "cvla/errors.hpp"

namespace cvla {

std::size_t token_count(const CompressionConfig& config) {
  config.validate();
  const std::size_t global = config.uses_stc() ? config.k : 0;
  const std::size_t local = config.uses_src() ? config.windows_per_view() : 0;
  return config.views * (global + local);
}

namespace {

/// Zero weights with bias (1…1, 0…0): γ = 1, β = 0 for every input.
Mlp identity_film(std::size_t in, std::size_t half) {
  Mlp mlp{{LinearMap::zeros(in, 2 * half)}, Activation::identity};
  for (std::size_t i = 0; i < half; ++i) mlp.layers[0].bias[i] = 1.0;
  return mlp;
}

}  // namespace

CompressorParams init_params(const CompressionConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.d, k = config.k, lang = config.instruction_width();
  CompressorParams p;
  p.config = config;

  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  p.stc.queries = TensorD({k, d});
  for (double& v : p.stc.queries.data()) v = rng.uniform(-bound, bound);
  if (!config.identity_projections) p.stc.proj = AttentionProjections::init(d, rng);
  p.stc.mlp_task = Mlp{{LinearMap::init(lang, 2 * d, rng), LinearMap::init(2 * d, d, rng)},
                       Activation::gelu};
  p.stc.mlp_film = identity_film(d, k * d);

  if (!config.identity_projections) p.src.proj = AttentionProjections::init(d, rng);
  p.src.mlp_inject = Mlp{{LinearMap::init(lang, d, rng)}, Activation::identity};
  p.src.mlp_film = identity_film(lang, d);
  p.src.window = config.w;
  return p;
}

void require_compatible(const CompressorParams& params, const CompressionConfig& config) {
  const CompressionConfig& stored = params.config;
  auto check = [](std::size_t have, std::size_t want, const char* field) {
    if (have != want) {
      throw ConfigMismatchError("parameters were built for " + std::string(field) + "=" +
                                std::to_string(have) + " but the config requests " + field + "=" +
                                std::to_string(want));
    }
  };
  check(stored.d, config.d, "D");
  check(stored.k, config.k, "k");
  check(stored.instruction_width(), config.instruction_width(), "lang_dim");
  if (stored.identity_projections != config.identity_projections) {
    throw ConfigMismatchError(std::string("parameters were built with identity_projections=") +
                              (stored.identity_projections ? "true" : "false") +
                              " but the config requests the opposite");
  }
}

template <typename T>
CompressGraph<T> compress_graph(const CompressorParams& params, const std::vector<Var<T>>& views,
                                const Var<T>& pooled, const CompressionConfig& config,
                                ParamBinder<T>& bind) {
  config.validate();
  require_compatible(params, config);
  if (views.size() != config.views) {
    throw ContractError("config expects " + std::to_string(config.views) + " views, got " +
                        std::to_string(views.size()));
  }
  const Shape view_dims{config.tokens_per_view(), config.d};
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (views[v].dims() != view_dims) {
      throw ShapeError("view " + std::to_string(v) + " has tokens " + shape_string(views[v].dims()) +
                       ", config expects " + shape_string(view_dims));
    }
  }
  if (pooled.dims() != Shape{config.instruction_width()}) {
    throw ShapeError("pooled instruction " + shape_string(pooled.dims()) + ", config expects [" +
                     std::to_string(config.instruction_width()) + "]");
  }

  std::optional<FilmVars<T>> film;
  if (config.stc_guided()) film = stc_film(params.stc, pooled, bind);
  QueryModulation<T> mod;
  if (config.src_guided()) {
    if (config.src_film()) {
      const FilmVars<T> f = src_film(params.src, pooled, bind);
      mod.scale = f.gamma;
      mod.shift = f.beta;
    } else {
      mod.shift = src_injection(params.src, pooled, bind);
    }
  }

  std::optional<Var<T>> queries;
  if (config.uses_stc()) queries = stc_queries(params.stc, film ? &*film : nullptr, bind);

  CompressGraph<T> out;
  std::vector<Var<T>> rows;
  for (const Var<T>& x : views) {
    std::optional<AttentionVars<T>> global, local;
    if (config.uses_stc()) {
      global = cross_attend(*queries, x, params.stc.proj, bind);
      rows.push_back(global->out);
    }
    if (config.uses_src()) {
      local = src_view_forward(params.src, x, config.h, config.width, config.w, mod, bind);
      rows.push_back(local->out);
    }
    out.global.push_back(std::move(global));
    out.local.push_back(std::move(local));
  }
  out.z = ad::concat_rows(rows);
  return out;
}

namespace {

template <typename T>
CompressedOutput run_compress(const CompressorParams& params, const std::vector<FeatureGrid>& views,
                              const PooledInstruction& pooled, const CompressionConfig& config) {
  ParamBinder<T> bind;
  std::vector<Var<T>> tokens;
  tokens.reserve(views.size());
  for (const FeatureGrid& g : views) tokens.push_back(Var<T>::constant(g.tokens().template cast<T>()));
  const CompressGraph<T> graph = compress_graph(
      params, tokens, Var<T>::constant(pooled.vector.template cast<T>()), config, bind);

  CompressedOutput out;
  out.z = graph.z.value().template cast<double>();
  const std::size_t n = config.tokens_per_view(), s = config.w * config.w;
  for (std::size_t v = 0; v < views.size(); ++v) {
    ViewOutput view{TensorD({0, config.d}), TensorD({0, config.d}), TensorD({0, n}),
                    TensorD({0, s})};
    if (const auto& g = graph.global[v]) {
      view.z_g = g->out.value().template cast<double>();
      view.attn_g = g->attn.value().template cast<double>();
    }
    if (const auto& l = graph.local[v]) {
      view.z_l = l->out.value().template cast<double>();
      view.attn_l = l->attn.value().template cast<double>();
    }
    out.views.push_back(std::move(view));
  }
  return out;
}

}  // namespace

CompressedOutput compress(const CompressorParams& params, const std::vector<FeatureGrid>& views,
                          const InstructionEmbedding& instruction, const CompressionConfig& config) {
  config.validate();
  if (views.size() != config.views) {
    throw ContractError("config expects " + std::to_string(config.views) + " views, got " +
                        std::to_string(views.size()));
  }
  const Shape grid_dims{config.h, config.width, config.d};
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (views[v].grid.dims() != grid_dims) {
      throw ShapeError("view " + std::to_string(v) + " has dims " +
                       shape_string(views[v].grid.dims()) + ", config expects " +
                       shape_string(grid_dims));
    }
  }
  if (instruction.tokens.rank() == 2 && instruction.tokens.dim(1) != config.instruction_width()) {
    throw ShapeError("instruction tokens " + shape_string(instruction.tokens.dims()) +
                     " do not match lang_dim " + std::to_string(config.instruction_width()));
  }
  const PooledInstruction pooled = pool_instruction(instruction);
  return config.precision == Precision::fast32
             ? run_compress<float>(params, views, pooled, config)
             : run_compress<double>(params, views, pooled, config);
}

std::vector<std::pair<std::string, const TensorD*>> named_tensors(const CompressorParams& p) {
  std::vector<std::pair<std::string, const TensorD*>> out;
  auto add_map = [&](const std::string& prefix, const LinearMap& m) {
    out.emplace_back(prefix + ".weight", &m.weight);
    if (!m.bias.empty()) out.emplace_back(prefix + ".bias", &m.bias);
  };
  auto add_mlp = [&](const std::string& prefix, const Mlp& mlp) {
    for (std::size_t i = 0; i < mlp.layers.size(); ++i)
      add_map(prefix + "." + std::to_string(i), mlp.layers[i]);
  };
  auto add_proj = [&](const std::string& prefix, const std::optional<AttentionProjections>& proj) {
    if (!proj) return;
    add_map(prefix + ".q", proj->q);
    add_map(prefix + ".k", proj->k);
    add_map(prefix + ".v", proj->v);
    add_map(prefix + ".o", proj->o);
  };
  out.emplace_back("stc.queries", &p.stc.queries);
  add_proj("stc.proj", p.stc.proj);
  add_mlp("stc.mlp_task", p.stc.mlp_task);
  add_mlp("stc.mlp_film", p.stc.mlp_film);
  add_proj("src.proj", p.src.proj);
  add_mlp("src.mlp_inject", p.src.mlp_inject);
  add_mlp("src.mlp_film", p.src.mlp_film);
  return out;
}

ParamRefs param_refs(CompressorParams& params) {
  ParamRefs out;
  for (const auto& [name, tensor] : named_tensors(params)) {
    out.emplace_back(name, const_cast<TensorD*>(tensor));
  }
  return out;
}

std::size_t parameter_count(const CompressorParams& params) {
  std::size_t total = 0;
  for (const auto& entry : named_tensors(params)) total += entry.second->size();
  return total;
}

namespace {

constexpr std::string_view kParamMagic = "CVLA";

}  // namespace

std::vector<char> serialize_params(const CompressorParams& params) {
  ByteWriter out;
  out.bytes(kParamMagic);
  out.u16(params.version);
  const std::string header = canonical_json(params.config);
  out.u32(static_cast<std::uint32_t>(header.size()));
  out.bytes(header);
  const bool wide = params.config.precision == Precision::verify64;
  for (const auto& [name, tensor] : named_tensors(params)) {
    out.u16(static_cast<std::uint16_t>(name.size()));
    out.bytes(name);
    out.u8(static_cast<std::uint8_t>(tensor->rank()));
    for (std::size_t d : tensor->dims()) out.u32(static_cast<std::uint32_t>(d));
    for (double v : tensor->data()) {
      if (wide) out.f64(v);
      else out.f32(static_cast<float>(v));
    }
  }
  return out.buffer();
}

CompressorParams deserialize_params(std::vector<char> data, const std::string& source) {
  ByteReader in(std::move(data), source);
  if (in.bytes(kParamMagic.size(), "magic") != kParamMagic) {
    throw FormatError(source + ": not a parameter file (bad magic)");
  }
  const std::uint16_t version = in.u16("format version");
  if (version != kParamFormatVersion) {
    throw FormatError(source + ": unsupported parameter format version " + std::to_string(version) +
                      " (this build reads version " + std::to_string(kParamFormatVersion) + ")");
  }
  const std::uint32_t header_size = in.u32("config length");
  const std::string header = in.bytes(header_size, "config");
  CompressionConfig config;
  try {
    config = config_from_json(nlohmann::json::parse(header));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": corrupt config header: " + e.what());
  } catch (const ContractError& e) {
    throw FormatError(source + ": invalid config header: " + e.what());
  }

  // Fill a correctly shaped skeleton so every stored tensor is checked against the config.
  CompressorParams params = init_params(config, 0);
  std::map<std::string, TensorD*> slots;
  for (auto& [name, tensor] : param_refs(params)) slots.emplace(name, tensor);
  std::set<std::string> seen;
  const bool wide = config.precision == Precision::verify64;
  while (!in.at_end()) {
    const std::string name = in.bytes(in.u16("tensor name length"), "tensor name");
    auto slot = slots.find(name);
    if (slot == slots.end()) throw FormatError(source + ": unexpected tensor '" + name + "'");
    if (!seen.insert(name).second) throw FormatError(source + ": duplicate tensor '" + name + "'");
    Shape dims(in.u8("tensor rank"));
    for (std::size_t& d : dims) d = in.u32("tensor dims");
    if (dims != slot->second->dims()) {
      throw FormatError(source + ": tensor '" + name + "' has dims " + shape_string(dims) +
                        " but the stored config implies " + shape_string(slot->second->dims()));
    }
    for (double& v : slot->second->data()) v = wide ? in.f64("tensor payload") : in.f32("tensor payload");
  }
  for (const auto& [name, tensor] : slots) {
    if (!seen.contains(name)) throw FormatError(source + ": missing tensor '" + name + "'");
  }
  return params;
}

void save_params(const CompressorParams& params, const std::filesystem::path& path) {
  write_file(path, serialize_params(params));
}

CompressorParams load_params(const std::filesystem::path& path) {
  return deserialize_params(read_file(path), path.string());
}

CompressorParams load_params(const std::filesystem::path& path, const CompressionConfig& expected) {
  CompressorParams params = load_params(path);
  require_compatible(params, expected);
  return params;
}

template CompressGraph<float> compress_graph(const CompressorParams&, const std::vector<Var<float>>&,
                                             const Var<float>&, const CompressionConfig&,
                                             ParamBinder<float>&);
template CompressGraph<double> compress_graph(const CompressorParams&,
                                              const std::vector<Var<double>>&, const Var<double>&,
                                              const CompressionConfig&, ParamBinder<double>&);

}  // namespace cvla
