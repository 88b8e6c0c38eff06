#include "cvla/cli.hpp"

#include <CLI11.hpp>

#include "cvla/accounting.hpp"
#include "cvla/errors.hpp"
#include "cvla/heatmap.hpp"
#include "cvla/pipeline.hpp"
#include "cvla/tensor_file.hpp"
#include "cvla/verification.hpp"

namespace cvla {

namespace {

CompressionConfig read_config(const std::string& path) {
  return with_precision_override(path.empty() ? CompressionConfig{} : load_config(path));
}

FeatureGrid read_view(const std::string& path, const CompressionConfig& config, std::size_t index) {
  const TensorD t = read_ctf(path).cast<double>();
  const Shape want{config.h, config.width, config.d};
  if (t.dims() == want) return {t, path};
  if (t.dims() == Shape{config.h * config.width, config.d}) return {t.reshaped(want), path};
  throw ShapeError("view " + std::to_string(index) + " (" + path + ") has dims " +
                   shape_string(t.dims()) + ", config expects " + shape_string(want));
}

InstructionEmbedding read_instruction(const std::string& path, const CompressionConfig& config) {
  TensorD t = read_ctf(path).cast<double>();
  // A rank-1 file is a single token; an empty one has no tokens.
  if (t.rank() == 1) {
    const std::size_t n = t.dim(0);
    t = n == 0 ? TensorD({0, config.instruction_width()}) : std::move(t).reshaped({1, n});
  }
  if (t.rank() != 2 || t.dim(1) != config.instruction_width()) {
    throw ShapeError("instruction " + path + " has dims " + shape_string(t.dims()) +
                     ", expected [T x " + std::to_string(config.instruction_width()) + "]");
  }
  return {t, {}};
}

std::vector<std::uint64_t> seed_list(std::size_t count) {
  std::vector<std::uint64_t> seeds(count);
  for (std::size_t i = 0; i < count; ++i) seeds[i] = i + 1;
  return seeds;
}

struct CompressArgs {
  std::string params, config, instruction, out, attn_dir;
  std::vector<std::string> views;
};

int cmd_compress(const CompressArgs& a, std::ostream& out) {
  const CompressionConfig config = read_config(a.config);
  config.validate();
  const CompressorParams params = load_params(a.params, config);
  std::vector<FeatureGrid> views;
  for (std::size_t i = 0; i < a.views.size(); ++i) views.push_back(read_view(a.views[i], config, i));
  const InstructionEmbedding instruction = read_instruction(a.instruction, config);
  const CompressedOutput result = compress(params, views, instruction, config);
  write_ctf(a.out, result.z.cast<float>());
  nlohmann::json report{{"out", a.out},
                        {"dims", result.z.dims()},
                        {"tokens", result.z.dim(0)},
                        {"precision", to_string(config.precision)}};
  if (!a.attn_dir.empty()) {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& p : export_attention(result, config, a.attn_dir)) files.push_back(p.string());
    report["attention_maps"] = files;
  }
  out << report.dump() << "\n";
  return kExitOk;
}

struct CertifyArgs {
  std::string mode = "grad";
  std::size_t seeds = 0;
  std::vector<std::string> variants;
  std::string config;
  std::size_t steps = 2000;
  std::size_t eval_scenes = 400;
};

int cmd_certify(const CertifyArgs& a, std::ostream& out) {
  std::vector<Variant> variants;
  for (const auto& v : a.variants) variants.push_back(parse_variant(v));
  nlohmann::json report;
  bool passed = false;
  if (a.mode == "oracle") {
    const OracleReport r = run_attention_oracle(50, a.seeds ? a.seeds : 1);
    report = to_json(r);
    passed = r.passed;
  } else if (a.mode == "grad") {
    CompressionConfig config;
    if (!a.config.empty()) {
      config = load_config(a.config);
    } else {
      config.h = config.width = 8;
    }
    config.precision = Precision::verify64;
    const CertificationReport r = certify_gradients(config, seed_list(a.seeds ? a.seeds : 5), 1e-5, variants);
    report = to_json(r);
    passed = r.passed;
  } else {
    if (variants.empty()) {
      variants = {Variant::stc_src, Variant::no_guidance, Variant::stc_only, Variant::src_only};
    }
    TrainerSettings settings;
    settings.steps = a.steps;
    settings.eval_scenes = a.eval_scenes;
    const ToySuiteReport r = run_toy_suite(seed_list(a.seeds ? a.seeds : 10), variants, settings);
    report = to_json(r);
    passed = r.passed;
  }
  out << report.dump() << "\n";
  return passed ? kExitOk : kExitCertification;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Instruction-guided visual token compressor"};
  app.name("cvla");
  app.require_subcommand(1);

  CompressArgs compress_args;
  auto* compress_cmd = app.add_subcommand("compress", "Compress view tensors into Z");
  compress_cmd->add_option("--params", compress_args.params, "CVLA parameter file")->required();
  compress_cmd->add_option("--config", compress_args.config, "Config JSON");
  compress_cmd->add_option("--views", compress_args.views, "View CTF files")->required()->delimiter(',');
  compress_cmd->add_option("--instruction", compress_args.instruction, "Instruction CTF file")->required();
  compress_cmd->add_option("--out", compress_args.out, "Output CTF for Z")->required();
  compress_cmd->add_option("--attn-dir", compress_args.attn_dir, "Directory for attention PGMs");

  std::string tokens_config;
  auto* tokens_cmd = app.add_subcommand("tokens", "Print compressed and baseline token counts");
  tokens_cmd->add_option("--config", tokens_config, "Config JSON");

  std::string flops_config, cost_model;
  std::size_t instruction_tokens = 1;
  auto* flops_cmd = app.add_subcommand("flops", "Print the FLOPs report for a cost model");
  flops_cmd->add_option("--config", flops_config, "Config JSON");
  flops_cmd->add_option("--cost-model", cost_model, "Cost model JSON")->required();
  flops_cmd->add_option("--instruction-tokens", instruction_tokens, "Instruction length")
      ->check(CLI::PositiveNumber);

  CertifyArgs certify_args;
  auto* certify_cmd = app.add_subcommand("certify", "Run gradient, oracle or toy-task checks");
  certify_cmd->add_option("--mode", certify_args.mode, "grad | oracle | toy")
      ->check(CLI::IsMember({"grad", "oracle", "toy"}));
  certify_cmd->add_option("--seeds", certify_args.seeds, "Number of seeds");
  certify_cmd->add_option("--variant", certify_args.variants, "Restrict to these variants");
  certify_cmd->add_option("--config", certify_args.config, "Config JSON for grad mode");
  certify_cmd->add_option("--steps", certify_args.steps, "Toy training steps");
  certify_cmd->add_option("--eval-scenes", certify_args.eval_scenes, "Toy held-out scenes");

  std::string init_config, init_out;
  std::uint64_t init_seed = 0;
  auto* init_cmd = app.add_subcommand("init", "Write freshly initialized parameters");
  init_cmd->add_option("--config", init_config, "Config JSON");
  auto* seed_opt = init_cmd->add_option("--seed", init_seed, "Init seed (default: config seed)");
  init_cmd->add_option("--out", init_out, "Output CVLA file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "cvla: " << e.what() << "\n";
    return kExitContract;
  }

  try {
    if (*compress_cmd) return cmd_compress(compress_args, out);
    if (*tokens_cmd) {
      const CompressionConfig config = read_config(tokens_config);
      out << tokens_report(config).dump() << "\n";
      return kExitOk;
    }
    if (*flops_cmd) {
      const CompressionConfig config = read_config(flops_config);
      out << to_json(pipeline_flops(load_cost_model(cost_model), config, instruction_tokens)).dump()
          << "\n";
      return kExitOk;
    }
    if (*certify_cmd) return cmd_certify(certify_args, out);
    if (*init_cmd) {
      const CompressionConfig config = read_config(init_config);
      const CompressorParams params = init_params(config, seed_opt->count() ? init_seed : config.seed);
      save_params(params, init_out);
      out << nlohmann::json{{"out", init_out},
                            {"parameter_count", parameter_count(params)},
                            {"bytes", serialize_params(params).size()}}
                 .dump()
          << "\n";
      return kExitOk;
    }
  } catch (const IoError& e) {
    err << "cvla: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "cvla: " << e.what() << "\n";
    return kExitContract;
  }
  return kExitContract;
}

}  // namespace cvla
