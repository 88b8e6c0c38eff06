#include <cstdlib>
#include <filesystem>

#include <gtest/gtest.h>

#include "cvla/binary_io.hpp"
#include "cvla/errors.hpp"
#include "cvla/pipeline.hpp"
#include "test_support.hpp"

namespace cvla {
namespace {

using testing::random_tensor;

constexpr Variant kVariants[] = {Variant::stc_src, Variant::stc_src_film, Variant::no_guidance,
                                 Variant::stc_only, Variant::src_only};

CompressionConfig desk(Variant variant = Variant::stc_src, std::size_t k = 16, std::size_t w = 2) {
  CompressionConfig c;
  c.variant = variant;
  c.k = k;
  c.w = w;
  return c;
}

std::vector<FeatureGrid> random_views(const CompressionConfig& c, Rng& rng) {
  std::vector<FeatureGrid> views;
  for (std::size_t v = 0; v < c.views; ++v)
    views.push_back({random_tensor({c.h, c.width, c.d}, rng), "view" + std::to_string(v)});
  return views;
}

InstructionEmbedding random_instruction(const CompressionConfig& c, Rng& rng, std::size_t tokens = 3) {
  return {random_tensor({tokens, c.instruction_width()}, rng), {}};
}

/// Non-identity conditioning so the instruction actually reaches both pathways.
void perturb_conditioning(CompressorParams& p, Rng& rng) {
  for (Mlp* mlp : {&p.stc.mlp_film, &p.src.mlp_film})
    for (double& v : mlp->layers[0].weight.data()) v = rng.uniform(-0.5, 0.5);
}

class TempDir {
 public:
  TempDir() {
    path_ = std::filesystem::temp_directory_path() /
            ("cvla_test_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "_" +
             std::to_string(std::rand()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

TEST(TokenCount, PublishedTables) {
  EXPECT_EQ(token_count(desk()), 160u);
  EXPECT_EQ(token_count(desk(Variant::stc_only)), 32u);
  EXPECT_EQ(token_count(desk(Variant::src_only)), 128u);
  EXPECT_EQ(token_count(desk(Variant::stc_src, 8)), 144u);
  EXPECT_EQ(token_count(desk(Variant::stc_src, 32)), 192u);
  EXPECT_EQ(token_count(desk(Variant::stc_src, 16, 4)), 64u);
  EXPECT_EQ(token_count(desk(Variant::stc_src, 16, 8)), 40u);
}

TEST(TokenCount, IndivisibleGridIsContractError) {
  EXPECT_THROW(token_count(desk(Variant::stc_src, 16, 3)), ContractError);
}

TEST(Compress, RowCountMatchesTokenCountOverSweep) {
  Rng rng(1);
  for (std::size_t k : {8u, 16u, 32u})
    for (std::size_t w : {2u, 4u, 8u})
      for (Variant variant : kVariants) {
        const CompressionConfig c = desk(variant, k, w);
        const CompressorParams p = init_params(c, 3);
        const CompressedOutput out = compress(p, random_views(c, rng), random_instruction(c, rng), c);
        EXPECT_EQ(out.z.dims(), (Shape{token_count(c), c.d})) << to_string(variant) << " k=" << k << " w=" << w;
        EXPECT_TRUE(out.z.all_finite());
      }
}

TEST(Compress, LayoutIsGlobalThenLocalPerView) {
  Rng rng(2);
  const CompressionConfig c = desk();
  CompressorParams p = init_params(c, 1);
  perturb_conditioning(p, rng);
  const CompressedOutput out = compress(p, random_views(c, rng), random_instruction(c, rng), c);
  std::size_t row = 0;
  for (const ViewOutput& view : out.views) {
    for (const TensorD* part : {&view.z_g, &view.z_l})
      for (std::size_t r = 0; r < part->dim(0); ++r, ++row)
        for (std::size_t j = 0; j < c.d; ++j) EXPECT_EQ(out.z.at(row, j), part->at(r, j));
  }
  EXPECT_EQ(row, 160u);
  EXPECT_EQ(out.views[0].attn_g.dims(), (Shape{16, 256}));
  EXPECT_EQ(out.views[0].attn_l.dims(), (Shape{64, 4}));
}

TEST(Compress, NoGuidanceIgnoresInstruction) {
  Rng rng(3);
  const CompressionConfig c = desk(Variant::no_guidance);
  CompressorParams p = init_params(c, 2);
  perturb_conditioning(p, rng);
  const auto views = random_views(c, rng);
  const CompressedOutput a = compress(p, views, random_instruction(c, rng), c);
  const CompressedOutput b = compress(p, views, random_instruction(c, rng, 7), c);
  EXPECT_TRUE(bitwise_equal(a.z, b.z));
}

TEST(Compress, IdentityFilmAndZeroInjectionEqualsNoGuidance) {
  Rng rng(4);
  CompressionConfig c = desk();
  CompressorParams p = init_params(c, 5);
  for (double& v : p.src.mlp_inject.layers[0].weight.data()) v = 0.0;
  const auto views = random_views(c, rng);
  const auto instruction = random_instruction(c, rng);
  const CompressedOutput guided = compress(p, views, instruction, c);
  c.variant = Variant::no_guidance;
  const CompressedOutput unguided = compress(p, views, instruction, c);
  EXPECT_TRUE(bitwise_equal(guided.z, unguided.z));
}

TEST(Compress, FilmVariantAtIdentityInitEqualsNoGuidanceLocally) {
  Rng rng(5);
  CompressionConfig c = desk(Variant::stc_src_film);
  const CompressorParams p = init_params(c, 6);
  const auto views = random_views(c, rng);
  const auto instruction = random_instruction(c, rng);
  const CompressedOutput film = compress(p, views, instruction, c);
  c.variant = Variant::no_guidance;
  EXPECT_TRUE(bitwise_equal(film.z, compress(p, views, instruction, c).z));
}

TEST(Compress, GuidedVariantsRespondToInstruction) {
  Rng rng(6);
  for (Variant variant : {Variant::stc_src, Variant::stc_src_film, Variant::stc_only, Variant::src_only}) {
    const CompressionConfig c = desk(variant);
    CompressorParams p = init_params(c, 7);
    perturb_conditioning(p, rng);
    const auto views = random_views(c, rng);
    const CompressedOutput a = compress(p, views, random_instruction(c, rng), c);
    const CompressedOutput b = compress(p, views, random_instruction(c, rng), c);
    EXPECT_FALSE(bitwise_equal(a.z, b.z)) << to_string(variant);
  }
}

TEST(Compress, ViewsAreIndependent) {
  Rng rng(7);
  const CompressionConfig c = desk();
  CompressorParams p = init_params(c, 8);
  perturb_conditioning(p, rng);
  auto views = random_views(c, rng);
  const auto instruction = random_instruction(c, rng);
  const CompressedOutput before = compress(p, views, instruction, c);
  views[1].grid = random_tensor({c.h, c.width, c.d}, rng);
  const CompressedOutput after = compress(p, views, instruction, c);
  EXPECT_TRUE(bitwise_equal(before.views[0].z_g, after.views[0].z_g));
  EXPECT_TRUE(bitwise_equal(before.views[0].z_l, after.views[0].z_l));
  EXPECT_FALSE(bitwise_equal(before.views[1].z_g, after.views[1].z_g));
}

TEST(Compress, InputErrors) {
  Rng rng(8);
  const CompressionConfig c = desk();
  const CompressorParams p = init_params(c, 0);
  auto views = random_views(c, rng);
  const auto instruction = random_instruction(c, rng);
  EXPECT_THROW(compress(p, {views[0]}, instruction, c), ContractError);
  views[1].grid = TensorD({16, 8, 8});
  EXPECT_THROW(compress(p, views, instruction, c), ShapeError);
  views[1].grid = TensorD({16, 16, 8});
  EXPECT_THROW(compress(p, views, {TensorD({0, 8}), {}}, c), ContractError);
  EXPECT_THROW(compress(p, views, {TensorD({2, 5}), {}}, c), ShapeError);
}

TEST(Compress, Fast32TracksVerify64) {
  Rng rng(9);
  CompressionConfig c = desk();
  CompressorParams p = init_params(c, 10);
  perturb_conditioning(p, rng);
  const auto views = random_views(c, rng);
  const auto instruction = random_instruction(c, rng);
  const CompressedOutput wide = compress(p, views, instruction, c);
  c.precision = Precision::fast32;
  const CompressedOutput narrow = compress(p, views, instruction, c);
  for (std::size_t i = 0; i < wide.z.size(); ++i) EXPECT_NEAR(narrow.z[i], wide.z[i], 1e-5);
}

TEST(InitParams, DeterministicInSeed) {
  const CompressionConfig c = desk();
  EXPECT_EQ(serialize_params(init_params(c, 4)), serialize_params(init_params(c, 4)));
  EXPECT_FALSE(bitwise_equal(init_params(c, 4).stc.queries, init_params(c, 5).stc.queries));
}

TEST(InitParams, FilmStartsAtIdentity) {
  const CompressorParams p = init_params(desk(), 0);
  const TensorD& bias = p.stc.mlp_film.layers[0].bias;
  for (std::size_t i = 0; i < bias.size(); ++i) EXPECT_EQ(bias[i], i < 16 * 8 ? 1.0 : 0.0);
  for (double v : p.stc.mlp_film.layers[0].weight.data()) EXPECT_EQ(v, 0.0);
}

TEST(InitParams, IdentityProjectionsStoreNoProjectionTensors) {
  CompressionConfig c = desk();
  c.identity_projections = true;
  for (const auto& [name, tensor] : named_tensors(init_params(c, 0)))
    EXPECT_EQ(name.find(".proj."), std::string::npos) << name;
}

TEST(ParamFile, RoundTripIsBitExactInBothPrecisions) {
  TempDir dir;
  Rng rng(10);
  for (Precision precision : {Precision::verify64, Precision::fast32}) {
    CompressionConfig c = desk();
    c.precision = precision;
    CompressorParams p = init_params(c, 11);
    perturb_conditioning(p, rng);
    const auto path = dir / "params.cvla";
    save_params(p, path);
    const CompressorParams loaded = load_params(path);
    EXPECT_EQ(loaded.config, c);
    EXPECT_EQ(serialize_params(loaded), serialize_params(p));
    const auto views = random_views(c, rng);
    const auto instruction = random_instruction(c, rng);
    EXPECT_TRUE(bitwise_equal(compress(loaded, views, instruction, c).z,
                              compress(p, views, instruction, c).z));
  }
}

TEST(ParamFile, HeaderLayout) {
  const CompressionConfig c = desk();
  const std::vector<char> bytes = serialize_params(init_params(c, 0));
  ASSERT_GT(bytes.size(), 10u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CVLA");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  const std::string json = canonical_json(c);
  const std::uint32_t len = static_cast<unsigned char>(bytes[6]) |
                            static_cast<unsigned char>(bytes[7]) << 8;
  EXPECT_EQ(len, json.size());
  EXPECT_EQ(std::string(bytes.begin() + 10, bytes.begin() + 10 + len), json);
}

TEST(ParamFile, SizeMatchesParameterCount) {
  const CompressorParams p = init_params(desk(), 0);
  std::size_t overhead = 4 + 2 + 4 + canonical_json(p.config).size();
  for (const auto& [name, tensor] : named_tensors(p)) overhead += 2 + name.size() + 1 + 4 * tensor->rank();
  EXPECT_EQ(serialize_params(p).size(), overhead + 8 * parameter_count(p));
}

TEST(ParamFile, EveryTruncationIsFormatError) {
  CompressionConfig c = desk(Variant::stc_src, 2, 4);
  c.h = c.width = 4;
  c.d = 2;
  const std::vector<char> bytes = serialize_params(init_params(c, 0));
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    EXPECT_THROW(deserialize_params(std::vector<char>(bytes.begin(), bytes.begin() + n), "t"),
                 FormatError)
        << "length " << n;
  }
}

TEST(ParamFile, CorruptHeadersAreFormatErrors) {
  std::vector<char> bytes = serialize_params(init_params(desk(), 0));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_params(bad_magic, "t"), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(deserialize_params(bad_version, "t"), FormatError);
  auto bad_json = bytes;
  bad_json[10] = '[';
  EXPECT_THROW(deserialize_params(bad_json, "t"), FormatError);
  auto trailing = bytes;
  trailing.push_back(1);
  EXPECT_THROW(deserialize_params(trailing, "t"), FormatError);
}

TEST(ParamFile, MissingFileIsIoError) {
  EXPECT_THROW(load_params("/nonexistent/dir/params.cvla"), IoError);
}

TEST(ParamFile, ArchitectureMismatchIsExplicit) {
  TempDir dir;
  save_params(init_params(desk(), 0), dir / "k16.cvla");
  try {
    load_params(dir / "k16.cvla", desk(Variant::stc_src, 32));
    FAIL() << "expected ConfigMismatchError";
  } catch (const ConfigMismatchError& e) {
    EXPECT_NE(std::string(e.what()).find("k=16"), std::string::npos) << e.what();
  }
  // Window size and variant are not stored architecture.
  EXPECT_NO_THROW(load_params(dir / "k16.cvla", desk(Variant::src_only, 16, 4)));
}

TEST(Config, JsonRoundTripAndStrictness) {
  CompressionConfig c = desk(Variant::stc_src_film, 8, 4);
  c.seed = 42;
  c.lang_dim = 12;
  EXPECT_EQ(config_from_json(to_json(c)), c);
  EXPECT_EQ(config_from_json(to_json(desk())), desk());
  EXPECT_THROW(config_from_json(nlohmann::json{{"k", 16}, {"depth", 3}}), ContractError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"k", -1}}), ContractError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"variant", "fancy"}}), ContractError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"w", 3}}), ContractError);
  EXPECT_EQ(config_from_json(nlohmann::json::object()), desk());
}

TEST(Config, CanonicalJsonHasSortedKeys) {
  EXPECT_EQ(canonical_json(desk()),
            R"({"D":8,"H":16,"W":16,"identity_projections":false,"k":16,"lang_dim":8,)"
            R"("precision":"verify64","seed":0,"variant":"stc_src","views":2,"w":2})");
}

TEST(Config, PrecisionEnvironmentOverride) {
  ::setenv("COMPRESSOR_PRECISION", "fast32", 1);
  EXPECT_EQ(with_precision_override(desk()).precision, Precision::fast32);
  ::setenv("COMPRESSOR_PRECISION", "half", 1);
  EXPECT_THROW(with_precision_override(desk()), ContractError);
  ::unsetenv("COMPRESSOR_PRECISION");
  EXPECT_EQ(with_precision_override(desk()).precision, Precision::verify64);
}

}  // namespace
}  // namespace cvla
