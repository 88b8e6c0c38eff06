#include "cvla/verification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cvla/errors.hpp"

namespace cvla {

// ---------------------------------------------------------------------------------------
// Attention oracles

TensorD brute_force_attention(const TensorD& q, const TensorD& keys, const TensorD& values) {
  if (q.rank() != 2 || keys.rank() != 2 || values.rank() != 2 || q.dim(1) != keys.dim(1) ||
      keys.dim(0) != values.dim(0)) {
    throw ShapeError("brute force attention got q " + shape_string(q.dims()) + ", keys " +
                     shape_string(keys.dims()) + ", values " + shape_string(values.dims()));
  }
  const std::size_t m = q.dim(0), n = keys.dim(0), d = q.dim(1), e = values.dim(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  TensorD out({m, e});
  std::vector<double> w(n);
  for (std::size_t i = 0; i < m; ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += q.at(i, c) * keys.at(j, c);
      w[j] = s * scale;
      peak = std::max(peak, w[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      w[j] = std::exp(w[j] - peak);
      total += w[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < e; ++c) out.at(i, c) += w[j] / total * values.at(j, c);
    }
  }
  return out;
}

namespace {

TensorD random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  TensorD t({rows, cols});
  for (double& v : t.data()) v = rng.normal();
  return t;
}

// x · weight + bias by explicit loops.
TensorD affine_loops(const TensorD& x, const LinearMap& map) {
  TensorD out({x.dim(0), map.out_features()});
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    for (std::size_t c = 0; c < map.out_features(); ++c) {
      double s = map.bias.empty() ? 0.0 : map.bias[c];
      for (std::size_t i = 0; i < map.in_features(); ++i) s += x.at(r, i) * map.weight.at(i, c);
      out.at(r, c) = s;
    }
  }
  return out;
}

double max_abs_diff(const TensorD& a, const TensorD& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

OracleReport run_attention_oracle(std::size_t instances, std::uint64_t seed) {
  Rng rng(seed);
  OracleReport report;
  report.instances = instances;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t k = 1 + rng.index(4), n = 1 + rng.index(16), d = 1 + rng.index(8);
    const TensorD q = random_matrix(k, d, rng);
    const TensorD x = random_matrix(n, d, rng);

    ParamBinder<double> bind;
    const auto plain = cross_attend(Var<double>::constant(q), Var<double>::constant(x),
                                    std::nullopt, bind);
    const double e_id = max_abs_diff(plain.out.value(), brute_force_attention(q, x, x));

    const std::optional<AttentionProjections> proj = AttentionProjections::init(d, rng);
    const auto projected = cross_attend(Var<double>::constant(q), Var<double>::constant(x), proj, bind);
    const TensorD expect = affine_loops(
        brute_force_attention(affine_loops(q, proj->q), affine_loops(x, proj->k),
                              affine_loops(x, proj->v)),
        proj->o);
    const double e_proj = max_abs_diff(projected.out.value(), expect);

    // One local window with an additive instruction offset.
    const std::size_t w = 1 + rng.index(4);
    SrcParams src;
    src.proj = AttentionProjections::init(d, rng);
    src.window = w;
    const TensorD win = random_matrix(w * w, d, rng).reshaped({w, w, d});
    SrcInjection inj{TensorD({d})};
    for (double& v : inj.vector.data()) v = rng.normal();
    const WindowOutput lib = src_window_forward(win, inj, src, /*guidance=*/true);
    const TensorD flat = win.reshaped({w * w, d});
    TensorD query({1, d});
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < w * w; ++r) s += flat.at(r, c);
      query.at(0, c) = s / static_cast<double>(w * w) + inj.vector[c];
    }
    const TensorD local = affine_loops(
        brute_force_attention(affine_loops(query, src.proj->q), affine_loops(flat, src.proj->k),
                              affine_loops(flat, src.proj->v)),
        src.proj->o);
    const double e_local = max_abs_diff(lib.z, local.reshaped({d}));

    report.max_abs_error_identity = std::max(report.max_abs_error_identity, e_id);
    report.max_abs_error_projected = std::max(report.max_abs_error_projected, e_proj);
    report.max_abs_error_local = std::max(report.max_abs_error_local, e_local);
    if (e_id <= kOracleIdentityTolerance && e_proj <= kOracleProjectedTolerance &&
        e_local <= kOracleProjectedTolerance) {
      ++report.matched;
    }
  }
  report.passed = report.matched == report.instances;
  return report;
}

// ---------------------------------------------------------------------------------------
// Gradient certification

std::vector<std::string> unreachable_groups(const CompressorParams& params, Variant variant) {
  CompressionConfig cfg = params.config;
  cfg.variant = variant;
  std::vector<std::string> out;
  for (const auto& [name, tensor] : named_tensors(params)) {
    const bool stc = name.starts_with("stc.");
    bool used;
    if (stc) {
      const bool conditioning = name.starts_with("stc.mlp_");
      used = cfg.uses_stc() && (!conditioning || cfg.stc_guided());
    } else if (name.starts_with("src.mlp_inject")) {
      used = cfg.src_guided() && !cfg.src_film();
    } else if (name.starts_with("src.mlp_film")) {
      used = cfg.src_guided() && cfg.src_film();
    } else {
      used = cfg.uses_src();
    }
    if (!used) out.push_back(name);
  }
  return out;
}

GradientCertificate certify_variant(const CompressionConfig& base, std::uint64_t seed, double eps) {
  CompressionConfig config = base;
  config.precision = Precision::verify64;
  config.validate();
  CompressorParams params = init_params(config, seed);
  Rng rng(seed ^ 0xC3A5C85C97CB3127ULL);
  // Move every tensor off its init point, including the identity FiLM generators.
  for (auto& [name, tensor] : param_refs(params)) {
    for (double& v : tensor->data()) v += rng.uniform(-0.3, 0.3);
  }

  std::vector<Var<double>> views;
  for (std::size_t v = 0; v < config.views; ++v) {
    views.push_back(Var<double>::constant(random_matrix(config.tokens_per_view(), config.d, rng)));
  }
  InstructionEmbedding instruction{random_matrix(3, config.instruction_width(), rng), {}};
  const Var<double> pooled = Var<double>::constant(pool_instruction(instruction).vector);
  TensorD c({token_count(config), config.d});
  for (double& v : c.data()) v = rng.uniform(-1.0, 1.0);

  // Σ c⊙z + ½Σz² minus its value at the base point, written as
  // Σ (c + z₀)⊙(z − z₀) + ½Σ(z − z₀)² so the sums never carry the large constant.
  TensorD z0;
  {
    ParamBinder<double> bind;
    z0 = compress_graph(params, views, pooled, config, bind).z.value();
  }
  TensorD neg_z0 = z0, weight = c;
  for (std::size_t i = 0; i < z0.size(); ++i) {
    neg_z0[i] = -z0[i];
    weight[i] += z0[i];
  }
  const Var<double> offset = Var<double>::constant(neg_z0);
  const Objective loss = [&](ParamBinder<double>& bind) {
    const Var<double> dz = ad::add(compress_graph(params, views, pooled, config, bind).z, offset);
    return ad::add(ad::weighted_sum(dz, weight), ad::scale(ad::sum_squares(dz), 0.5));
  };
  const ParamRefs refs = param_refs(params);
  const FiniteDiffReport fd = finite_diff_check(loss, refs, eps);

  GradientCertificate cert;
  cert.variant = config.variant;
  cert.seed = seed;
  cert.max_rel_error = fd.max_rel_error;
  cert.worst_group = fd.worst_param;
  cert.per_group = fd.per_param;
  cert.analytic_at_worst = fd.analytic_at_worst;
  cert.numeric_at_worst = fd.numeric_at_worst;
  cert.loss = evaluate(loss);
  cert.unreachable_groups = unreachable_groups(params, config.variant);
  const GradientMap analytic = gradients(loss, refs);
  for (const std::string& name : cert.unreachable_groups) {
    const TensorD& g = analytic.at(name);
    if (std::any_of(g.data().begin(), g.data().end(), [](double v) { return v != 0.0; })) {
      cert.unreachable_groups_zero = false;
    }
  }
  return cert;
}

CertificationReport certify_gradients(const CompressionConfig& config,
                                      const std::vector<std::uint64_t>& seeds, double eps,
                                      const std::vector<Variant>& variants) {
  static const std::vector<Variant> kAll{Variant::stc_src, Variant::stc_src_film,
                                         Variant::no_guidance, Variant::stc_only, Variant::src_only};
  if (seeds.empty()) throw ContractError("gradient certification needs at least one seed");
  CertificationReport report;
  report.config = config;
  report.eps = eps;
  for (Variant variant : variants.empty() ? kAll : variants) {
    CompressionConfig cfg = config;
    cfg.variant = variant;
    for (std::uint64_t seed : seeds) {
      GradientCertificate cert = certify_variant(cfg, seed, eps);
      report.max_rel_error = std::max(report.max_rel_error, cert.max_rel_error);
      for (const auto& [group, err] : cert.per_group) {
        if (!(err < kGradientTolerance)) {
          report.failures.push_back(to_string(variant) + "/" + std::to_string(seed) + "/" + group);
        }
      }
      if (!cert.unreachable_groups_zero) {
        report.failures.push_back(to_string(variant) + "/" + std::to_string(seed) +
                                  "/unreachable-nonzero");
      }
      report.runs.push_back(std::move(cert));
    }
  }
  report.passed = report.failures.empty();
  return report;
}

// ---------------------------------------------------------------------------------------
// Synthetic instruction-retrieval task

std::size_t ToySceneConfig::code_bits() const {
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < region_count()) ++bits;
  return bits;
}

void ToySceneConfig::validate() const {
  if (window == 0 || h % window != 0 || width % window != 0) {
    throw ContractError("scene window " + std::to_string(window) + " does not tile " +
                        std::to_string(h) + "x" + std::to_string(width));
  }
  if (windows_per_row() % 2 != 0) {
    throw ContractError("scene needs an even number of windows per row, got " +
                        std::to_string(windows_per_row()));
  }
  if (d <= code_bits()) {
    throw ContractError("D=" + std::to_string(d) + " leaves no channels for object types");
  }
  if (objects == 0) throw ContractError("scene needs at least one object");
  const std::size_t capacity = std::min(type_count(), region_count());
  if (objects > capacity) {
    throw ContractError("P=" + std::to_string(objects) + " objects exceed the scene capacity of " +
                        std::to_string(capacity));
  }
  if (!(sigma >= 0.0)) throw ContractError("scene noise must be non-negative");
}

namespace {

// First `count` entries of a uniform random permutation of [0, n).
std::vector<std::size_t> draw_distinct(Rng& rng, std::size_t n, std::size_t count) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng.index(n - i)]);
  pool.resize(count);
  return pool;
}

}  // namespace

ToyScene generate_toy_scene(Rng& rng, const ToySceneConfig& cfg) {
  cfg.validate();
  const std::size_t per_row = cfg.windows_per_row(), half = per_row / 2, bits = cfg.code_bits();
  const std::size_t w = cfg.window;
  ToyScene scene;
  scene.grid.grid = TensorD({cfg.h, cfg.width, cfg.d});
  scene.grid.view_id = "toy";
  TensorD& g = scene.grid.grid;
  auto stamp_code = [&](std::size_t r, std::size_t c) {
    const std::size_t region = (r / w) * half + (c / w) / 2;
    for (std::size_t b = 0; b < bits; ++b) g.at(r, c, cfg.d - bits + b) = (region >> b) & 1 ? 1.0 : -1.0;
  };
  if (cfg.code_background) {
    for (std::size_t r = 0; r < cfg.h; ++r)
      for (std::size_t c = 0; c < cfg.width; ++c) stamp_code(r, c);
  }
  scene.object_types = draw_distinct(rng, cfg.type_count(), cfg.objects);
  const std::vector<std::size_t> regions = draw_distinct(rng, cfg.region_count(), cfg.objects);
  for (std::size_t i = 0; i < cfg.objects; ++i) {
    const std::size_t wr = regions[i] / half;
    const std::size_t wc = (regions[i] % half) * 2 + rng.index(2);
    scene.object_windows.push_back(wr * per_row + wc);
    for (std::size_t r = wr * w; r < (wr + 1) * w; ++r) {
      for (std::size_t c = wc * w; c < (wc + 1) * w; ++c) {
        g.at(r, c, scene.object_types[i]) += 1.0;
        if (!cfg.code_background) stamp_code(r, c);
      }
    }
  }
  scene.target = rng.index(cfg.objects);
  scene.instruction.tokens = TensorD({1, cfg.d});
  scene.instruction.tokens[scene.object_types[scene.target]] = 1.0;
  if (cfg.sigma > 0.0) {
    for (double& v : g.data()) v += cfg.sigma * rng.normal();
    for (double& v : scene.instruction.tokens.data()) v += cfg.sigma * rng.normal();
  }
  return scene;
}

ToyScene generate_toy_scene(std::uint64_t seed, std::size_t objects, double sigma) {
  Rng rng(seed);
  ToySceneConfig cfg;
  cfg.objects = objects;
  cfg.sigma = sigma;
  return generate_toy_scene(rng, cfg);
}

CompressionConfig toy_compression_config(Variant variant) {
  CompressionConfig c;
  c.d = 8;
  c.k = 4;
  c.w = 2;
  c.h = 8;
  c.width = 8;
  c.views = 1;
  c.variant = variant;
  return c;
}

double solvability_oracle_accuracy(const ToySceneConfig& cfg, std::size_t scenes, std::uint64_t seed) {
  if (scenes == 0) throw ContractError("oracle needs at least one scene");
  Rng rng(seed);
  const std::size_t types = cfg.type_count();
  std::size_t correct = 0;
  for (std::size_t s = 0; s < scenes; ++s) {
    const ToyScene scene = generate_toy_scene(rng, cfg);
    const std::size_t per_row = cfg.windows_per_row(), w = cfg.window;
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t win = 0; win < cfg.window_count(); ++win) {
      const std::size_t wr = win / per_row, wc = win % per_row;
      double score = 0.0;
      for (std::size_t t = 0; t < types; ++t) {
        double mean = 0.0;
        for (std::size_t r = wr * w; r < (wr + 1) * w; ++r) {
          for (std::size_t c = wc * w; c < (wc + 1) * w; ++c) mean += scene.grid.grid.at(r, c, t);
        }
        score += mean / static_cast<double>(w * w) * scene.instruction.tokens[t];
      }
      if (score > best_score) {
        best_score = score;
        best = win;
      }
    }
    if (best == scene.label()) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scenes);
}

namespace {

constexpr std::uint64_t kDataStream = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kEvalStream = 0xBF58476D1CE4E5B9ULL;
constexpr std::uint64_t kReadoutStream = 0x94D049BB133111EBULL;


template <typename T>
struct BatchForward {
  Var<T> logits;
  std::vector<CompressGraph<T>> graphs;
};

template <typename T>
BatchForward<T> forward_batch(const CompressorParams& params, const LinearMap& readout,
                              const std::vector<ToyScene>& scenes, const CompressionConfig& config,
                              ParamBinder<T>& bind) {
  BatchForward<T> out;
  std::vector<Var<T>> rows;
  for (const ToyScene& scene : scenes) {
    const Var<T> tokens = Var<T>::constant(scene.grid.tokens().template cast<T>());
    const Var<T> pooled =
        Var<T>::constant(pool_instruction(scene.instruction).vector.template cast<T>());
    CompressGraph<T> graph = compress_graph(params, {tokens}, pooled, config, bind);
    rows.push_back(ad::reshape(graph.z, {1, graph.z.value().size()}));
    out.graphs.push_back(std::move(graph));
  }
  out.logits = linear_forward(readout, ad::concat_rows(rows), bind);
  return out;
}

struct AdamState {
  std::vector<TensorD> m, v;
  std::size_t t = 0;
};

void apply_update(const std::vector<TensorD*>& tensors, const std::vector<TensorD>& grads,
                  const TrainerSettings& settings, AdamState& state) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const double lr = settings.learning_rate;
  if (settings.optimizer == Optimizer::sgd) {
    for (std::size_t p = 0; p < tensors.size(); ++p) {
      for (std::size_t i = 0; i < tensors[p]->size(); ++i) (*tensors[p])[i] -= lr * grads[p][i];
    }
    return;
  }
  if (state.m.empty()) {
    for (const TensorD* t : tensors) {
      state.m.emplace_back(t->dims());
      state.v.emplace_back(t->dims());
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < tensors.size(); ++p) {
    TensorD& m = state.m[p];
    TensorD& v = state.v[p];
    for (std::size_t i = 0; i < tensors[p]->size(); ++i) {
      const double g = grads[p][i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      (*tensors[p])[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

template <typename T>
ToyModel train_impl(const CompressionConfig& config, const TrainerSettings& settings,
                    std::uint64_t seed) {
  ToyModel model{init_params(config, seed), {}, config, 0.0, false};
  Rng readout_rng(seed ^ kReadoutStream);
  model.readout =
      LinearMap::init(token_count(config) * config.d, settings.scene.window_count(), readout_rng);

  std::vector<TensorD*> tensors;
  for (auto& entry : param_refs(model.params)) tensors.push_back(entry.second);
  tensors.push_back(&model.readout.weight);
  tensors.push_back(&model.readout.bias);

  Rng data(seed ^ kDataStream);
  AdamState adam;
  std::vector<ToyScene> batch(settings.batch);
  std::vector<std::size_t> labels(settings.batch);
  for (std::size_t step = 0; step < settings.steps; ++step) {
    for (std::size_t b = 0; b < settings.batch; ++b) {
      batch[b] = generate_toy_scene(data, settings.scene);
      labels[b] = batch[b].label();
    }
    ParamBinder<T> bind(/*track_gradients=*/true);
    const BatchForward<T> fwd = forward_batch(model.params, model.readout, batch, config, bind);
    const Var<T> loss = ad::cross_entropy(fwd.logits, std::span<const std::size_t>(labels));
    model.final_loss = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(model.final_loss)) {
      model.diverged = true;
      return model;
    }
    backward(loss);
    std::vector<TensorD> grads;
    grads.reserve(tensors.size());
    for (const TensorD* t : tensors) grads.push_back(bind.gradient(*t));
    apply_update(tensors, grads, settings, adam);
  }
  return model;
}

template <typename T>
ToyPrediction predict_impl(const ToyModel& model, const ToyScene& scene) {
  ParamBinder<T> bind;
  const BatchForward<T> fwd = forward_batch(model.params, model.readout, {scene}, model.config, bind);
  ToyPrediction out;
  out.logits = fwd.logits.value().template cast<double>();
  if (const auto& global = fwd.graphs[0].global[0]) {
    const Tensor<T>& attn = global->attn.value();
    const std::size_t k = attn.dim(0), n = attn.dim(1);
    TensorD mean({model.config.h, model.config.width});
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t q = 0; q < k; ++q) s += static_cast<double>(attn.at(q, j));
      mean[j] = s / static_cast<double>(k);
    }
    out.global_attention = std::move(mean);
  }
  return out;
}

}  // namespace

std::vector<double> window_masses(const TensorD& attention_map, const ToySceneConfig& cfg,
                                  const std::vector<std::size_t>& windows) {
  const std::size_t w = cfg.window, per_row = cfg.windows_per_row();
  std::vector<double> mass;
  for (std::size_t win : windows) {
    const std::size_t wr = win / per_row, wc = win % per_row;
    double s = 0.0;
    for (std::size_t r = wr * w; r < (wr + 1) * w; ++r)
      for (std::size_t c = wc * w; c < (wc + 1) * w; ++c) s += attention_map.at(r, c);
    mass.push_back(s);
  }
  return mass;
}

namespace {

void require_toy_shapes(const CompressionConfig& config, const TrainerSettings& settings) {
  config.validate();
  settings.scene.validate();
  if (config.views != 1 || config.h != settings.scene.h || config.width != settings.scene.width ||
      config.d != settings.scene.d || config.w != settings.scene.window ||
      config.instruction_width() != settings.scene.d) {
    throw ContractError("toy task needs one view of the scene's grid and D as instruction width");
  }
  if (settings.batch == 0 || settings.eval_scenes == 0) {
    throw ContractError("toy task needs a positive batch and evaluation set");
  }
}

}  // namespace

ToyModel train_toy_model(const CompressionConfig& config, const TrainerSettings& settings,
                         std::uint64_t seed) {
  require_toy_shapes(config, settings);
  return config.precision == Precision::fast32 ? train_impl<float>(config, settings, seed)
                                               : train_impl<double>(config, settings, seed);
}

ToyPrediction predict_toy(const ToyModel& model, const ToyScene& scene) {
  return model.config.precision == Precision::fast32 ? predict_impl<float>(model, scene)
                                                     : predict_impl<double>(model, scene);
}

ToyTaskResult evaluate_toy_model(const ToyModel& model, const TrainerSettings& settings,
                                 std::uint64_t seed) {
  ToyTaskResult result;
  result.variant = model.config.variant;
  result.seed = seed;
  result.final_loss = model.final_loss;
  result.diverged = model.diverged;
  if (model.diverged) return result;

  Rng eval(seed ^ kEvalStream);
  std::size_t correct = 0, top = 0;
  double mass_total = 0.0;
  for (std::size_t s = 0; s < settings.eval_scenes; ++s) {
    const ToyScene scene = generate_toy_scene(eval, settings.scene);
    const ToyPrediction pred = predict_toy(model, scene);
    if (!pred.logits.all_finite()) {
      result.diverged = true;
      return result;
    }
    const auto logits = pred.logits.data();
    const auto guess = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (guess == scene.label()) ++correct;
    if (!pred.global_attention) continue;
    const std::vector<double> mass = window_masses(*pred.global_attention, settings.scene, scene.object_windows);
    mass_total += mass[scene.target];
    bool is_top = true;
    for (std::size_t o = 0; o < mass.size(); ++o) {
      if (o != scene.target && !(mass[scene.target] > mass[o])) is_top = false;
    }
    if (is_top) ++top;
  }
  const double n = static_cast<double>(settings.eval_scenes);
  result.eval_scenes = settings.eval_scenes;
  result.retrieval_accuracy = static_cast<double>(correct) / n;
  if (model.config.uses_stc()) {
    result.attention_mass_on_target = mass_total / n;
    result.target_mass_top_fraction = static_cast<double>(top) / n;
    result.target_top_scenes = top;
  }
  return result;
}

ToyTaskResult train_toy_task(const CompressionConfig& config, const TrainerSettings& settings,
                             std::uint64_t seed) {
  return evaluate_toy_model(train_toy_model(config, settings, seed), settings, seed);
}

bool check_instruction_invariance(std::uint64_t seed, const ToySceneConfig& cfg) {
  Rng rng(seed);
  const ToyScene scene = generate_toy_scene(rng, cfg);
  CompressionConfig config = toy_compression_config(Variant::no_guidance);
  config.h = cfg.h;
  config.width = cfg.width;
  config.d = cfg.d;
  config.w = cfg.window;
  const CompressorParams params = init_params(config, seed);
  InstructionEmbedding other{TensorD({2, cfg.d}), {}};
  for (double& v : other.tokens.data()) v = rng.normal();
  const CompressedOutput a = compress(params, {scene.grid}, scene.instruction, config);
  const CompressedOutput b = compress(params, {scene.grid}, other, config);
  return bitwise_equal(a.z, b.z);
}

ToySuiteReport run_toy_suite(const std::vector<std::uint64_t>& seeds,
                             const std::vector<Variant>& variants, const TrainerSettings& settings) {
  if (seeds.empty() || variants.empty()) {
    throw ContractError("toy suite needs at least one seed and one variant");
  }
  ToySuiteReport report;
  report.chance = 1.0 / static_cast<double>(settings.scene.objects);
  report.oracle_accuracy = solvability_oracle_accuracy(settings.scene, settings.eval_scenes, 0);
  report.checks["task_solvable"] = report.oracle_accuracy >= kToyAccuracyThreshold;

  auto has = [&](Variant v) { return std::find(variants.begin(), variants.end(), v) != variants.end(); };
  std::size_t top = 0, scored = 0;
  bool diverged = false;
  for (Variant variant : variants) {
    double total = 0.0;
    for (std::uint64_t seed : seeds) {
      ToyTaskResult r = train_toy_task(toy_compression_config(variant), settings, seed);
      total += r.retrieval_accuracy;
      if (variant == Variant::stc_src) {
        diverged = diverged || r.diverged;
        top += r.target_top_scenes;
        scored += r.eval_scenes;
      }
      report.runs.push_back(std::move(r));
    }
    report.mean_accuracy[variant] = total / static_cast<double>(seeds.size());
  }

  if (has(Variant::stc_src)) {
    report.checks["stc_src_converged"] = !diverged;
    report.checks["stc_src_accuracy"] = report.mean_accuracy[Variant::stc_src] >= kToyAccuracyThreshold;
    if (scored > 0) report.pooled_target_top_fraction = static_cast<double>(top) / static_cast<double>(scored);
    report.checks["stc_src_attention"] = report.pooled_target_top_fraction.value_or(0.0) >=
                                         kToyAttentionTopThreshold;
    bool beats = true, compared = false;
    for (Variant ablation : {Variant::no_guidance, Variant::stc_only, Variant::src_only}) {
      if (!has(ablation)) continue;
      compared = true;
      beats = beats && report.mean_accuracy[Variant::stc_src] > report.mean_accuracy[ablation];
    }
    if (compared) report.checks["stc_src_beats_ablations"] = beats;
  }
  if (has(Variant::no_guidance)) {
    report.checks["no_guidance_at_chance"] =
        report.mean_accuracy[Variant::no_guidance] <= report.chance + kToyChanceMargin;
    report.instruction_invariance = true;
    for (std::uint64_t seed : seeds) {
      report.instruction_invariance =
          report.instruction_invariance && check_instruction_invariance(seed, settings.scene);
    }
    report.checks["no_guidance_instruction_invariance"] = report.instruction_invariance;
  }
  report.passed = std::all_of(report.checks.begin(), report.checks.end(),
                              [](const auto& c) { return c.second; });
  return report;
}

// ---------------------------------------------------------------------------------------
// Reports

nlohmann::json to_json(const OracleReport& r) {
  return {{"mode", "oracle"},
          {"instances", r.instances},
          {"matched", r.matched},
          {"max_abs_error_identity", r.max_abs_error_identity},
          {"max_abs_error_projected", r.max_abs_error_projected},
          {"max_abs_error_local", r.max_abs_error_local},
          {"tolerance_identity", kOracleIdentityTolerance},
          {"tolerance_projected", kOracleProjectedTolerance},
          {"passed", r.passed}};
}

nlohmann::json to_json(const CertificationReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const GradientCertificate& c : r.runs) {
    runs.push_back({{"variant", to_string(c.variant)},
                    {"seed", c.seed},
                    {"max_rel_error", c.max_rel_error},
                    {"worst_group", c.worst_group},
                    {"analytic_at_worst", c.analytic_at_worst},
                    {"numeric_at_worst", c.numeric_at_worst},
                    {"loss", c.loss},
                    {"per_group", c.per_group},
                    {"unreachable_groups", c.unreachable_groups},
                    {"unreachable_groups_zero", c.unreachable_groups_zero}});
  }
  return {{"mode", "grad"},
          {"config", to_json(r.config)},
          {"eps", r.eps},
          {"tolerance", kGradientTolerance},
          {"max_rel_error", r.max_rel_error},
          {"failures", r.failures},
          {"runs", runs},
          {"passed", r.passed}};
}

nlohmann::json to_json(const ToyTaskResult& r) {
  nlohmann::json j{{"variant", to_string(r.variant)},
                   {"seed", r.seed},
                   {"retrieval_accuracy", r.retrieval_accuracy},
                   {"final_loss", r.diverged ? nlohmann::json(nullptr) : nlohmann::json(r.final_loss)},
                   {"diverged", r.diverged},
                   {"eval_scenes", r.eval_scenes}};
  j["attention_mass_on_target"] =
      r.attention_mass_on_target ? nlohmann::json(*r.attention_mass_on_target) : nlohmann::json(nullptr);
  j["target_mass_top_fraction"] =
      r.target_mass_top_fraction ? nlohmann::json(*r.target_mass_top_fraction) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const ToySuiteReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const ToyTaskResult& t : r.runs) runs.push_back(to_json(t));
  nlohmann::json means = nlohmann::json::object();
  for (const auto& [variant, acc] : r.mean_accuracy) means[to_string(variant)] = acc;
  return {{"mode", "toy"},
          {"chance", r.chance},
          {"oracle_accuracy", r.oracle_accuracy},
          {"mean_accuracy", means},
          {"pooled_target_top_fraction", r.pooled_target_top_fraction
                                             ? nlohmann::json(*r.pooled_target_top_fraction)
                                             : nlohmann::json(nullptr)},
          {"instruction_invariance", r.instruction_invariance},
          {"thresholds",
           {{"accuracy", kToyAccuracyThreshold},
            {"chance_margin", kToyChanceMargin},
            {"attention_top", kToyAttentionTopThreshold}}},
          {"checks", r.checks},
          {"runs", runs},
          {"passed", r.passed}};
}

}  // namespace cvla
