#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "cvla/binary_io.hpp"
#include "cvla/errors.hpp"
#include "cvla/heatmap.hpp"
#include "cvla/tensor_file.hpp"
#include "test_support.hpp"

namespace cvla {
namespace {

TEST(Ctf, ByteLayout) {
  const TensorF t({1, 2}, {1.0f, -2.5f});
  const std::vector<char> bytes = encode_ctf(t);
  const std::vector<unsigned char> expected = {'C', 'T', 'F', '1', 2, 1, 0, 0, 0, 2, 0, 0, 0,
                                               0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x20, 0xC0};
  ASSERT_EQ(bytes.size(), expected.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    EXPECT_EQ(static_cast<unsigned char>(bytes[i]), expected[i]) << "byte " << i;
}

TEST(Ctf, RoundTripIsBitExact) {
  Rng rng(1);
  TensorF t({3, 4, 5});
  for (float& v : t.data()) v = static_cast<float>(rng.normal());
  t[0] = -0.0f;
  t[1] = 1e-40f;  // subnormal
  const TensorF back = decode_ctf(encode_ctf(t), "mem");
  EXPECT_TRUE(bitwise_equal(back, t));
}

TEST(Ctf, ZeroExtentRoundTrips) {
  const TensorF t({0, 8});
  EXPECT_EQ(decode_ctf(encode_ctf(t), "mem").dims(), (Shape{0, 8}));
}

TEST(Ctf, MalformedFilesAreFormatErrors) {
  const std::vector<char> bytes = encode_ctf(TensorF({2, 2}, {1, 2, 3, 4}));
  for (std::size_t n = 0; n < bytes.size(); ++n)
    EXPECT_THROW(decode_ctf({bytes.begin(), bytes.begin() + n}, "t"), FormatError) << n;
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_ctf(trailing, "t"), FormatError);
  auto magic = bytes;
  magic[3] = '2';
  EXPECT_THROW(decode_ctf(magic, "t"), FormatError);
}

TEST(Ctf, FileRoundTripAndMissingFile) {
  const auto path = std::filesystem::temp_directory_path() / "cvla_formats_test.ctf";
  const TensorF t({2, 3}, {1, 2, 3, 4, 5, 6});
  write_ctf(path, t);
  EXPECT_TRUE(bitwise_equal(read_ctf(path), t));
  std::filesystem::remove(path);
  EXPECT_THROW(read_ctf(path), IoError);
  try {
    read_ctf(path);
  } catch (const FormatError&) {
    FAIL() << "missing file must not be a format error";
  } catch (const IoError&) {
  }
}

TEST(Pgm, QuantizesLinearlyBetweenMinAndMax) {
  const GrayImage img = quantize(TensorD::matrix({{0.0, 0.5}, {1.0, 0.2}}));
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.height, 2u);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{0, 8, 15, 3}));
  const GrayImage flat = quantize(TensorD::filled({2, 3}, 0.25));
  EXPECT_EQ(flat.pixels, std::vector<std::uint8_t>(6, 0));
}

TEST(Pgm, EncodesBinaryGraymap) {
  const GrayImage img = quantize(TensorD::matrix({{1.0, 3.0, 2.0}}));
  const std::vector<char> bytes = encode_pgm(img);
  const std::string text(bytes.begin(), bytes.end());
  EXPECT_EQ(text.rfind("P5\n# linear gray: 0 = 1, 15 = 3\n3 1\n15\n", 0), 0u) << text;
  ASSERT_GE(bytes.size(), 3u);
  EXPECT_EQ(bytes[bytes.size() - 3], 0);
  EXPECT_EQ(bytes[bytes.size() - 2], 15);
  EXPECT_EQ(bytes[bytes.size() - 1], 8);
}

TEST(Pgm, TilesLocalAttentionIntoGrid) {
  // 2x4 grid, w=2: two windows side by side.
  const TensorD attn = TensorD::matrix({{1, 2, 3, 4}, {5, 6, 7, 8}});
  const TensorD tiled = tile_local_attention(attn, 2, 4, 2);
  EXPECT_TRUE(bitwise_equal(tiled, TensorD::matrix({{1, 2, 5, 6}, {3, 4, 7, 8}})));
  EXPECT_THROW(tile_local_attention(attn, 4, 4, 2), ShapeError);
}

TEST(Pgm, ExportWritesOneFilePerQueryAndOneLocalMapPerView) {
  CompressionConfig c;
  c.h = c.width = 4;
  c.k = 3;
  c.views = 2;
  Rng rng(2);
  const CompressorParams p = init_params(c, 0);
  std::vector<FeatureGrid> views;
  for (int v = 0; v < 2; ++v) views.push_back({testing::random_tensor({4, 4, 8}, rng), ""});
  const CompressedOutput out = compress(p, views, {testing::random_tensor({1, 8}, rng), {}}, c);
  const auto dir = std::filesystem::temp_directory_path() / "cvla_formats_attn";
  std::filesystem::remove_all(dir);
  const auto written = export_attention(out, c, dir);
  EXPECT_EQ(written.size(), 2u * (3u + 1u));
  EXPECT_TRUE(std::filesystem::exists(dir / "view1_query2.pgm"));
  EXPECT_TRUE(std::filesystem::exists(dir / "view0_local.pgm"));
  const std::vector<char> bytes = read_file(dir / "view0_query0.pgm");
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 3), "P5\n");
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace cvla
