// Acceptance checks: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cvla/accounting.hpp"
#include "cvla/binary_io.hpp"
#include "cvla/cli.hpp"
#include "cvla/errors.hpp"
#include "cvla/ops.hpp"
#include "cvla/pipeline.hpp"
#include "cvla/tensor_file.hpp"
#include "cvla/verification.hpp"

namespace {

using namespace cvla;
namespace fs = std::filesystem;

struct Outcome {
  bool passed = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      notes.push_back("failed: " + what);
    }
  }
  void note(const std::string& text) { notes.push_back(text); }
};

std::string fmt(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

TensorD random_tensor(Shape dims, Rng& rng) {
  TensorD t(std::move(dims));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

std::vector<FeatureGrid> random_views(const CompressionConfig& c, Rng& rng) {
  std::vector<FeatureGrid> views;
  for (std::size_t v = 0; v < c.views; ++v) views.push_back({random_tensor({c.h, c.width, c.d}, rng), ""});
  return views;
}

InstructionEmbedding random_instruction(const CompressionConfig& c, Rng& rng, std::size_t tokens = 3) {
  return {random_tensor({tokens, c.instruction_width()}, rng), {}};
}

constexpr Variant kVariants[] = {Variant::stc_src, Variant::stc_src_film, Variant::no_guidance,
                                 Variant::stc_only, Variant::src_only};

// ---------------------------------------------------------------------------------------

Outcome token_table() {
  struct Row {
    std::size_t k, w;
    Variant variant;
    std::size_t expected;
  };
  const Row rows[] = {{16, 2, Variant::stc_src, 160}, {16, 2, Variant::stc_only, 32},
                      {16, 2, Variant::src_only, 128}, {16, 2, Variant::stc_src, 160},
                      {8, 2, Variant::stc_src, 144},  {16, 2, Variant::stc_src, 160},
                      {32, 2, Variant::stc_src, 192}, {16, 4, Variant::stc_src, 64},
                      {16, 8, Variant::stc_src, 40}};
  Outcome o;
  std::string counts;
  for (const Row& r : rows) {
    CompressionConfig c;
    c.k = r.k;
    c.w = r.w;
    c.variant = r.variant;
    const std::size_t got = token_count(c);
    counts += (counts.empty() ? "" : " ") + std::to_string(got);
    o.require(got == r.expected, "k=" + std::to_string(r.k) + " w=" + std::to_string(r.w) + " " +
                                     to_string(r.variant) + " gave " + std::to_string(got) +
                                     ", expected " + std::to_string(r.expected));
  }
  o.note("counts " + counts);
  return o;
}

Outcome gradient_certification() {
  CompressionConfig c;
  c.h = c.width = 8;
  c.views = 2;
  const CertificationReport r = certify_gradients(c, {1, 2, 3, 4, 5}, 1e-5);
  Outcome o;
  o.require(r.passed, std::to_string(r.failures.size()) + " group checks above " + fmt(kGradientTolerance));
  for (const std::string& f : r.failures) o.note("over tolerance: " + f);
  for (const GradientCertificate& cert : r.runs) {
    if (cert.max_rel_error >= kGradientTolerance) {
      o.note(to_string(cert.variant) + "/" + std::to_string(cert.seed) + " worst " + cert.worst_group +
             " analytic " + fmt(cert.analytic_at_worst) + " numeric " + fmt(cert.numeric_at_worst));
    }
  }
  o.note("max relative error " + fmt(r.max_rel_error) + " over " + std::to_string(r.runs.size()) + " runs");
  return o;
}

Outcome attention_oracle() {
  const OracleReport r = run_attention_oracle(50, 1);
  Outcome o;
  o.require(r.passed, "oracle mismatch");
  o.note(std::to_string(r.matched) + "/" + std::to_string(r.instances) + " matched, max error identity " +
         fmt(r.max_abs_error_identity) + ", projected " + fmt(r.max_abs_error_projected));
  return o;
}

Outcome structural_invariants() {
  Outcome o;
  Rng rng(2024);

  double worst_row = 0.0;
  for (Variant variant : kVariants) {
    CompressionConfig c;
    c.variant = variant;
    CompressorParams p = init_params(c, 3);
    for (Mlp* mlp : {&p.stc.mlp_film, &p.src.mlp_film})
      for (double& v : mlp->layers[0].weight.data()) v = rng.uniform(-0.5, 0.5);
    const CompressedOutput out = compress(p, random_views(c, rng), random_instruction(c, rng), c);
    for (const ViewOutput& v : out.views) {
      for (const TensorD* a : {&v.attn_g, &v.attn_l}) {
        for (std::size_t r = 0; r < a->dim(0); ++r) {
          double s = 0.0;
          for (std::size_t j = 0; j < a->dim(1); ++j) s += a->at(r, j);
          worst_row = std::max(worst_row, std::abs(s - 1.0));
        }
      }
    }
  }
  o.require(worst_row <= 1e-6, "attention row sums off by " + fmt(worst_row));

  {
    CompressionConfig c;
    CompressorParams p = init_params(c, 5);
    for (double& v : p.src.mlp_inject.layers[0].weight.data()) v = 0.0;
    const auto views = random_views(c, rng);
    const auto instruction = random_instruction(c, rng);
    const TensorD guided = compress(p, views, instruction, c).z;
    c.variant = Variant::stc_src_film;
    const TensorD film = compress(p, views, instruction, c).z;
    c.variant = Variant::no_guidance;
    const TensorD unguided = compress(p, views, instruction, c).z;
    o.require(bitwise_equal(guided, unguided), "identity FiLM with zero injection differs from no_guidance");
    o.require(bitwise_equal(film, unguided), "FiLM-modulated variant at init differs from no_guidance");
  }

  {
    SrcParams p;
    p.proj = AttentionProjections::init(4, rng);
    p.mlp_inject = Mlp{{LinearMap::init(4, 4, rng)}, Activation::identity};
    p.window = 2;
    const SrcInjection inj{random_tensor({4}, rng)};
    FeatureGrid g{random_tensor({4, 4, 4}, rng), ""};
    const SrcOutput base = src_forward(g, inj, p, true);
    FeatureGrid touched = g;
    touched.grid.at(3, 2, 1) += 0.5;
    const SrcOutput moved = src_forward(touched, inj, p, true);
    bool local = true;
    for (std::size_t wi = 0; wi < 3; ++wi)
      for (std::size_t j = 0; j < 4; ++j) local = local && moved.z_l.at(wi, j) == base.z_l.at(wi, j);
    o.require(local, "editing one window changed another window's summary");

    FeatureGrid swapped = g;
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t j = 0; j < 4; ++j) std::swap(swapped.grid.at(r, c, j), swapped.grid.at(r + 2, c + 2, j));
    const SrcOutput perm = src_forward(swapped, inj, p, true);
    const std::size_t mapping[] = {3, 1, 2, 0};
    bool equivariant = true;
    for (std::size_t wi = 0; wi < 4; ++wi)
      for (std::size_t j = 0; j < 4; ++j) equivariant = equivariant && perm.z_l.at(wi, j) == base.z_l.at(mapping[wi], j);
    o.require(equivariant, "window swap did not permute summaries bit-exactly");
  }

  {
    CompressionConfig c;
    c.variant = Variant::no_guidance;
    CompressorParams p = init_params(c, 8);
    for (Mlp* mlp : {&p.stc.mlp_film, &p.src.mlp_film})
      for (double& v : mlp->layers[0].weight.data()) v = rng.uniform(-0.5, 0.5);
    const auto views = random_views(c, rng);
    const TensorD a = compress(p, views, random_instruction(c, rng), c).z;
    const TensorD b = compress(p, views, random_instruction(c, rng, 6), c).z;
    o.require(bitwise_equal(a, b), "no_guidance output depends on the instruction");
  }
  o.note("worst attention row-sum deviation " + fmt(worst_row));
  return o;
}

Outcome instruction_steering(std::size_t seeds) {
  std::vector<std::uint64_t> list(seeds);
  for (std::size_t i = 0; i < seeds; ++i) list[i] = i + 1;
  const ToySuiteReport r = run_toy_suite(
      list, {Variant::stc_src, Variant::no_guidance, Variant::stc_only, Variant::src_only}, TrainerSettings{});
  Outcome o;
  for (const auto& [name, ok] : r.checks) o.require(ok, name);
  std::string means;
  for (const auto& [variant, acc] : r.mean_accuracy) means += " " + to_string(variant) + "=" + fmt(acc);
  o.note("mean accuracy" + means + ", chance " + fmt(r.chance) + ", oracle " + fmt(r.oracle_accuracy));
  o.note("fraction of stc_src scenes where the target holds the most global attention: " +
         fmt(r.pooled_target_top_fraction.value_or(0.0)));
  for (const ToyTaskResult& t : r.runs) {
    if (t.variant == Variant::stc_src) {
      o.note("stc_src seed " + std::to_string(t.seed) + ": accuracy " + fmt(t.retrieval_accuracy) +
             ", target-top " + fmt(t.target_mass_top_fraction.value_or(0.0)));
    }
  }
  return o;
}

int run_cli_quiet(std::vector<std::string> args) {
  args.insert(args.begin(), "cvla");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

Outcome round_trip() {
  Outcome o;
  Rng rng(77);
  const fs::path dir = fs::temp_directory_path() / "cvla_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  for (Precision precision : {Precision::verify64, Precision::fast32}) {
    CompressionConfig c;
    c.precision = precision;
    CompressorParams p = init_params(c, 4);
    for (auto& [name, t] : param_refs(p)) {
      for (double& v : t->data()) {
        v = rng.uniform(-1.0, 1.0);
        if (precision == Precision::fast32) v = static_cast<float>(v);
      }
    }
    save_params(p, dir / "p.cvla");
    const CompressorParams back = load_params(dir / "p.cvla");
    bool same = back.config == p.config;
    const auto a = named_tensors(p), b = named_tensors(back);
    same = same && a.size() == b.size();
    for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i].first == b[i].first && bitwise_equal(*a[i].second, *b[i].second);
    o.require(same, "parameter round trip in " + to_string(precision));
  }

  const TensorF t = random_tensor({3, 5, 2}, rng).cast<float>();
  write_ctf(dir / "t.ctf", t);
  o.require(bitwise_equal(read_ctf(dir / "t.ctf"), t), "tensor file round trip");

  std::vector<char> bytes = read_file(dir / "p.cvla");
  bool all_truncations = true;
  for (std::size_t cut = 0; cut < bytes.size(); cut += 97) {
    try {
      deserialize_params(std::vector<char>(bytes.begin(), bytes.begin() + static_cast<long>(cut)), "cut");
      all_truncations = false;
    } catch (const FormatError&) {
    }
  }
  o.require(all_truncations, "a truncated parameter file loaded");

  // Command-line exit codes for broken inputs.
  const std::string params = (dir / "good.cvla").string();
  o.require(run_cli_quiet({"init", "--out", params}) == kExitOk, "init");
  Rng vr(1);
  write_ctf(dir / "v0.ctf", random_tensor({16, 16, 8}, vr).cast<float>());
  write_ctf(dir / "v1.ctf", random_tensor({16, 16, 8}, vr).cast<float>());
  write_ctf(dir / "i.ctf", random_tensor({2, 8}, vr).cast<float>());
  auto compress_with = [&](const std::string& p, const std::string& view0) {
    return run_cli_quiet({"compress", "--params", p, "--views", view0 + "," + (dir / "v1.ctf").string(),
                          "--instruction", (dir / "i.ctf").string(), "--out", (dir / "z.ctf").string()});
  };
  o.require(compress_with(params, (dir / "v0.ctf").string()) == kExitOk, "compress on valid files");
  std::vector<char> cut = read_file(params);
  cut.resize(cut.size() / 2);
  write_file(dir / "cut.cvla", cut);
  o.require(compress_with((dir / "cut.cvla").string(), (dir / "v0.ctf").string()) == kExitIo,
            "truncated parameter file exit code");
  std::vector<char> view = read_file(dir / "v0.ctf");
  view.push_back('\0');
  write_file(dir / "trail.ctf", view);
  o.require(compress_with(params, (dir / "trail.ctf").string()) == kExitIo, "trailing bytes exit code");
  view[0] = 'X';
  write_file(dir / "magic.ctf", view);
  o.require(compress_with(params, (dir / "magic.ctf").string()) == kExitIo, "bad magic exit code");
  write_ctf(dir / "small.ctf", random_tensor({8, 8, 8}, vr).cast<float>());
  o.require(compress_with(params, (dir / "small.ctf").string()) == kExitContract, "shape mismatch exit code");
  fs::remove_all(dir);
  return o;
}

Outcome flops_consistency() {
  Outcome o;
  std::size_t cases = 0;
  for (std::size_t k : {8u, 16u, 32u})
    for (std::size_t w : {2u, 4u, 8u})
      for (Variant variant : kVariants)
        for (bool identity : {false, true}) {
          CompressionConfig c;
          c.k = k;
          c.w = w;
          c.variant = variant;
          c.identity_projections = identity;
          Rng rng(k * 31 + w);
          const CompressorParams p = init_params(c, 1);
          const auto views = random_views(c, rng);
          const auto instruction = random_instruction(c, rng, 2);
          FlopCounter counter;
          compress(p, views, instruction, c);
          ++cases;
          o.require(counter.total() == compressor_flops(c, 2),
                    to_string(variant) + " k=" + std::to_string(k) + " w=" + std::to_string(w) +
                        ": counted " + std::to_string(counter.total()) + ", formula " +
                        std::to_string(compressor_flops(c, 2)));
        }

  const CostModel models[] = {{0, 1, 0, 0}, {0, 0, 1, 0}, {100, 3, 0.5, 0}, {1e12, 1e9, 1e6, 0}};
  for (const CostModel& m : models) {
    std::vector<std::pair<std::size_t, double>> points;
    for (std::size_t k : {4u, 8u, 16u, 32u})
      for (std::size_t w : {1u, 2u, 4u, 8u, 16u}) {
        CompressionConfig c;
        c.k = k;
        c.w = w;
        const FlopsReport r = pipeline_flops(m, c);
        points.emplace_back(r.tokens_compressed, r.ratio);
      }
    std::sort(points.begin(), points.end());
    for (std::size_t i = 1; i < points.size(); ++i) {
      if (points[i].first == points[i - 1].first) continue;
      o.require(points[i].second > points[i - 1].second,
                "ratio not increasing between " + std::to_string(points[i - 1].first) + " and " +
                    std::to_string(points[i].first) + " tokens");
    }
  }
  o.note(std::to_string(cases) + " configurations counted");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::size_t toy_seeds = 10;
  bool verbose = false;
  app.add_option("--criterion", only, "Run only these criteria (1-7)")->check(CLI::Range(1, 7));
  app.add_option("--toy-seeds", toy_seeds, "Seeds for the steering criterion")->check(CLI::Range(10, 1000));
  app.add_flag("--verbose", verbose, "Print details for passing criteria too");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"token-count table", token_table},
      {"gradient certification", gradient_certification},
      {"attention oracle equivalence", attention_oracle},
      {"structural invariants", structural_invariants},
      {"instruction steering", [&] { return instruction_steering(toy_seeds); }},
      {"round-trip and format", round_trip},
      {"FLOPs model consistency", flops_consistency},
  };

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome.passed = false;
      outcome.note(std::string("error: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %d: %s (%.1fs)\n", outcome.passed ? "PASS" : "FAIL", id,
                criteria[i].first.c_str(), seconds);
    if (!outcome.passed || verbose) {
      for (const std::string& n : outcome.notes) std::printf("    %s\n", n.c_str());
    }
    std::fflush(stdout);
    all = all && outcome.passed;
  }
  return all ? 0 : 1;
}
