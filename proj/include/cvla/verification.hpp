#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvla/pipeline.hpp"

namespace cvla {

// ---------------------------------------------------------------------------------------
// Attention oracles

/// Scaled dot-product attention by explicit scalar loops: q[m×D], keys[n×D], values[n×E].
TensorD brute_force_attention(const TensorD& q, const TensorD& keys, const TensorD& values);

struct OracleReport {
  std::size_t instances = 0;
  std::size_t matched = 0;
  double max_abs_error_identity = 0.0;   // library vs loops, identity projections
  double max_abs_error_projected = 0.0;  // same projected K/V fed to both paths
  double max_abs_error_local = 0.0;      // local window attention vs loops
  bool passed = false;
};

inline constexpr double kOracleIdentityTolerance = 1e-9;
inline constexpr double kOracleProjectedTolerance = 1e-7;

/// Random instances with k ≤ 4, N ≤ 16, D ≤ 8.
OracleReport run_attention_oracle(std::size_t instances, std::uint64_t seed);

// ---------------------------------------------------------------------------------------
// Gradient certification

inline constexpr double kGradientTolerance = 1e-4;

struct GradientCertificate {
  Variant variant = Variant::stc_src;
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  std::string worst_group;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  double loss = 0.0;
  std::map<std::string, double> per_group;
  /// Every group the variant never touches has an exactly zero analytic gradient.
  bool unreachable_groups_zero = true;
  std::vector<std::string> unreachable_groups;
};

struct CertificationReport {
  CompressionConfig config;
  double eps = 1e-5;
  std::vector<GradientCertificate> runs;
  double max_rel_error = 0.0;
  bool passed = false;
  /// Groups above tolerance, as "variant/seed/group".
  std::vector<std::string> failures;
};

/// Parameter groups a variant never reads.
std::vector<std::string> unreachable_groups(const CompressorParams& params, Variant variant);

/// Finite-difference check of loss = Σ c⊙z + ½Σz² for one variant and seed. Parameters are
/// randomized (including the FiLM generators) so no path sits at a special point.
GradientCertificate certify_variant(const CompressionConfig& config, std::uint64_t seed, double eps);
CertificationReport certify_gradients(const CompressionConfig& config,
                                      const std::vector<std::uint64_t>& seeds, double eps = 1e-5,
                                      const std::vector<Variant>& variants = {});

// ---------------------------------------------------------------------------------------
// Synthetic instruction-retrieval task

/// Scene layout. Windows are grouped into regions of two horizontally adjacent windows. Objects
/// are whole windows carrying one of the first type_count() basis directions, at most one per
/// region, and their tokens carry the region's ±1 binary code in the last code_bits() channels.
struct ToySceneConfig {
  std::size_t h = 8;
  std::size_t width = 8;
  std::size_t d = 8;
  std::size_t window = 2;
  std::size_t objects = 4;
  double sigma = 0.1;
  /// Background tokens carry their region code too.
  bool code_background = false;

  std::size_t windows_per_row() const { return width / window; }
  std::size_t window_count() const { return (h / window) * windows_per_row(); }
  std::size_t region_count() const { return window_count() / 2; }
  std::size_t code_bits() const;
  std::size_t type_count() const { return d - code_bits(); }
  /// Throws ContractError when the layout cannot host `objects` distinct objects.
  void validate() const;
};

struct ToyScene {
  FeatureGrid grid;
  InstructionEmbedding instruction;
  std::vector<std::size_t> object_windows;  // window index of each object, row-major
  std::vector<std::size_t> object_types;    // basis channel of each object
  std::size_t target = 0;                   // which object the instruction names

  std::size_t label() const { return object_windows[target]; }
};

ToyScene generate_toy_scene(Rng& rng, const ToySceneConfig& cfg);
ToyScene generate_toy_scene(std::uint64_t seed, std::size_t objects, double sigma);

/// Compressor shape used for the task: one view, D=8, k=4, w=2 on an 8×8 grid.
CompressionConfig toy_compression_config(Variant variant);

enum class Optimizer { adam, sgd };

struct TrainerSettings {
  std::size_t steps = 2000;
  std::size_t batch = 16;
  double learning_rate = 1e-2;
  Optimizer optimizer = Optimizer::adam;
  std::size_t eval_scenes = 400;
  ToySceneConfig scene;
};

struct ToyTaskResult {
  Variant variant = Variant::stc_src;
  std::uint64_t seed = 0;
  double retrieval_accuracy = 0.0;
  double final_loss = 0.0;
  bool diverged = false;
  /// Global-attention weight inside the target window, averaged over queries and scenes.
  std::optional<double> attention_mass_on_target;
  /// Fraction of scenes where the target window holds more global attention than every
  /// other object window.
  std::optional<double> target_mass_top_fraction;
  std::size_t target_top_scenes = 0;
  std::size_t eval_scenes = 0;
};

/// Compressor plus linear readout from flattened Z to one logit per window.
struct ToyModel {
  CompressorParams params;
  LinearMap readout;
  CompressionConfig config;
  double final_loss = 0.0;
  bool diverged = false;
};

struct ToyPrediction {
  TensorD logits;                         // [1×windows]
  std::optional<TensorD> global_attention;  // [H×W], averaged over queries
};

/// Trains with cross-entropy on the target window. Stops early when the loss is not finite.
ToyModel train_toy_model(const CompressionConfig& config, const TrainerSettings& settings,
                         std::uint64_t seed);
ToyPrediction predict_toy(const ToyModel& model, const ToyScene& scene);
/// Scores held-out scenes drawn from a stream of its own.
ToyTaskResult evaluate_toy_model(const ToyModel& model, const TrainerSettings& settings,
                                 std::uint64_t seed);
ToyTaskResult train_toy_task(const CompressionConfig& config, const TrainerSettings& settings,
                             std::uint64_t seed);

/// Attention mass inside each listed window of an [H×W] map.
std::vector<double> window_masses(const TensorD& attention_map, const ToySceneConfig& cfg,
                                  const std::vector<std::size_t>& windows);

/// Matches the instruction to per-window means of the object channels: an upper bound on
/// achievable accuracy at the scene's noise level.
double solvability_oracle_accuracy(const ToySceneConfig& cfg, std::size_t scenes, std::uint64_t seed);

inline constexpr double kToyAccuracyThreshold = 0.95;
inline constexpr double kToyChanceMargin = 0.1;
inline constexpr double kToyAttentionTopThreshold = 0.9;

struct ToySuiteReport {
  std::vector<ToyTaskResult> runs;
  std::map<Variant, double> mean_accuracy;
  double chance = 0.0;
  double oracle_accuracy = 0.0;
  std::optional<double> pooled_target_top_fraction;  // stc_src, pooled over seeds
  bool instruction_invariance = true;                // no_guidance Z ignores the instruction
  std::map<std::string, bool> checks;
  bool passed = false;
};

/// Runs every requested variant on every seed and evaluates the steering criteria that the
/// requested variants make checkable.
ToySuiteReport run_toy_suite(const std::vector<std::uint64_t>& seeds,
                             const std::vector<Variant>& variants, const TrainerSettings& settings);

/// Bit-identical Z for two different instructions under no_guidance.
bool check_instruction_invariance(std::uint64_t seed, const ToySceneConfig& cfg);

nlohmann::json to_json(const OracleReport& r);
nlohmann::json to_json(const CertificationReport& r);
nlohmann::json to_json(const ToyTaskResult& r);
nlohmann::json to_json(const ToySuiteReport& r);

}  // namespace cvla
