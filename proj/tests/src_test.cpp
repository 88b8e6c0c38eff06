#include <cmath>

#include <gtest/gtest.h>

#include "cvla/errors.hpp"
#include "cvla/src.hpp"
#include "test_support.hpp"

namespace cvla {
namespace {

using testing::random_tensor;
using testing::row_sum;

SrcParams make_params(std::size_t d, std::size_t w, Rng& rng, bool projections = true) {
  SrcParams p;
  if (projections) p.proj = AttentionProjections::init(d, rng);
  p.mlp_inject = Mlp{{LinearMap::init(d, d, rng)}, Activation::identity};
  p.mlp_film = Mlp{{LinearMap::zeros(d, 2 * d)}, Activation::identity};
  p.window = w;
  return p;
}

FeatureGrid random_grid(std::size_t h, std::size_t w, std::size_t d, Rng& rng) {
  return {random_tensor({h, w, d}, rng), "view0"};
}

TEST(PartitionWindows, TopLeftWindowAndReconstruction) {
  Rng rng(1);
  const FeatureGrid g = random_grid(4, 4, 3, rng);
  const auto windows = partition_windows(g, 2);
  ASSERT_EQ(windows.size(), 4u);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(windows[0].at(r, c, j), g.grid.at(r, c, j));
  for (std::size_t wi = 0; wi < 4; ++wi)
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t j = 0; j < 3; ++j)
          EXPECT_EQ(windows[wi].at(r, c, j), g.grid.at((wi / 2) * 2 + r, (wi % 2) * 2 + c, j));
}

TEST(PartitionWindows, UnitWindowGivesOneTokenEach) {
  Rng rng(2);
  EXPECT_EQ(partition_windows(random_grid(3, 5, 2, rng), 1).size(), 15u);
}

TEST(PartitionWindows, LargeWindowCount) {
  Rng rng(3);
  EXPECT_EQ(partition_windows(random_grid(16, 16, 2, rng), 8).size(), 4u);
}

TEST(PartitionWindows, IndivisibleGridListsValidSizes) {
  Rng rng(4);
  try {
    partition_windows(random_grid(16, 16, 2, rng), 3);
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("{1, 2, 4, 8, 16}"), std::string::npos) << e.what();
  }
  EXPECT_THROW(partition_windows(random_grid(4, 4, 2, rng), 0), ContractError);
}

TEST(DownsampleWindow, MeanCases) {
  EXPECT_TRUE(bitwise_equal(downsample_window(TensorD::filled({2, 2, 3}, 1.25)),
                            TensorD::filled({3}, 1.25)));
  const TensorD win({2, 2, 2}, {0, 0, 2, 0, 0, 2, 2, 2});
  EXPECT_TRUE(bitwise_equal(downsample_window(win), TensorD::vector({1, 1})));
  const TensorD single({1, 1, 3}, {0.1, 0.2, -0.3});
  EXPECT_TRUE(bitwise_equal(downsample_window(single), TensorD::vector({0.1, 0.2, -0.3})));
}

TEST(SrcWindow, ZeroInjectionMatchesUnguided) {
  Rng rng(5);
  const SrcParams p = make_params(4, 2, rng);
  const TensorD win = random_tensor({2, 2, 4}, rng);
  const WindowOutput on = src_window_forward(win, {TensorD({4})}, p, true);
  const WindowOutput off = src_window_forward(win, {random_tensor({4}, rng)}, p, false);
  EXPECT_TRUE(bitwise_equal(on.z, off.z));
  EXPECT_TRUE(bitwise_equal(on.attn, off.attn));
}

TEST(SrcWindow, SingleTokenWindowIgnoresQuery) {
  Rng rng(6);
  const SrcParams p = make_params(3, 1, rng);
  const TensorD win = random_tensor({1, 1, 3}, rng);
  const WindowOutput a = src_window_forward(win, {random_tensor({3}, rng)}, p, true);
  const WindowOutput b = src_window_forward(win, {random_tensor({3}, rng, 5.0)}, p, true);
  EXPECT_TRUE(bitwise_equal(a.z, b.z));
  EXPECT_EQ(a.attn[0], 1.0);
}

TEST(SrcWindow, ClosedFormWithIdentityProjections) {
  // tokens e0, e1, e0, e1 -> mean [0.5, 0.5]; injection [1.5, -0.5] -> q = [2, 0]
  SrcParams p;
  p.window = 2;
  const TensorD win({2, 2, 2}, {1, 0, 0, 1, 1, 0, 0, 1});
  const WindowOutput out = src_window_forward(win, {TensorD::vector({1.5, -0.5})}, p, true);
  const double hi = std::exp(2.0 / std::sqrt(2.0)), lo = 1.0;
  const double z = 2 * hi + 2 * lo;
  EXPECT_NEAR(out.attn[0], hi / z, 1e-15);
  EXPECT_NEAR(out.attn[1], lo / z, 1e-15);
  EXPECT_NEAR(out.z[0], 2 * hi / z, 1e-15);
  EXPECT_NEAR(out.z[1], 2 * lo / z, 1e-15);
}

TEST(SrcForward, LocalTokenCounts) {
  Rng rng(7);
  const FeatureGrid g = random_grid(16, 16, 4, rng);
  const SrcInjection inj{random_tensor({4}, rng)};
  EXPECT_EQ(src_forward(g, inj, make_params(4, 2, rng), true).z_l.dims(), (Shape{64, 4}));
  EXPECT_EQ(src_forward(g, inj, make_params(4, 4, rng), true).z_l.dims(), (Shape{16, 4}));
}

TEST(SrcForward, MatchesPerWindowEvaluation) {
  Rng rng(8);
  const SrcParams p = make_params(4, 2, rng);
  const FeatureGrid g = random_grid(4, 6, 4, rng);
  const SrcInjection inj{random_tensor({4}, rng)};
  const SrcOutput full = src_forward(g, inj, p, true);
  const auto windows = partition_windows(g, 2);
  ASSERT_EQ(full.z_l.dim(0), windows.size());
  for (std::size_t wi = 0; wi < windows.size(); ++wi) {
    const WindowOutput one = src_window_forward(windows[wi], inj, p, true);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(full.z_l.at(wi, j), one.z[j]);
  }
}

TEST(SrcProperties, WindowLocalityIsBitExact) {
  Rng rng(9);
  const SrcParams p = make_params(4, 2, rng);
  const SrcInjection inj{random_tensor({4}, rng)};
  FeatureGrid g = random_grid(4, 4, 4, rng);
  const SrcOutput base = src_forward(g, inj, p, true);
  // Perturb only window 3 (rows 2..3, cols 2..3).
  g.grid.at(3, 2, 1) += 0.5;
  g.grid.at(2, 3, 0) -= 1.0;
  const SrcOutput out = src_forward(g, inj, p, true);
  for (std::size_t wi = 0; wi < 3; ++wi)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out.z_l.at(wi, j), base.z_l.at(wi, j));
  EXPECT_NE(out.z_l.at(3, 0), base.z_l.at(3, 0));
}

TEST(SrcProperties, WindowPermutationEquivarianceIsBitExact) {
  Rng rng(10);
  const SrcParams p = make_params(3, 2, rng);
  const SrcInjection inj{random_tensor({3}, rng)};
  const FeatureGrid g = random_grid(4, 4, 3, rng);
  // Swap window 0 (top-left) with window 3 (bottom-right).
  FeatureGrid swapped = g;
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t j = 0; j < 3; ++j)
        std::swap(swapped.grid.at(r, c, j), swapped.grid.at(r + 2, c + 2, j));
  const SrcOutput a = src_forward(g, inj, p, true), b = src_forward(swapped, inj, p, true);
  const std::size_t mapping[] = {3, 1, 2, 0};
  for (std::size_t wi = 0; wi < 4; ++wi)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(b.z_l.at(wi, j), a.z_l.at(mapping[wi], j));
}

TEST(SrcProperties, AttentionRowsSumToOne) {
  Rng rng(11);
  for (std::size_t w : {1u, 2u, 4u}) {
    const SrcOutput out =
        src_forward(random_grid(8, 8, 4, rng), {random_tensor({4}, rng)}, make_params(4, w, rng), true);
    EXPECT_EQ(out.attn.dims(), (Shape{64 / (w * w), w * w}));
    EXPECT_EQ(out.z_l.dim(0) * w * w, 64u);
    for (std::size_t r = 0; r < out.attn.dim(0); ++r) EXPECT_NEAR(row_sum(out.attn, r), 1.0, 1e-6);
  }
}

}  // namespace
}  // namespace cvla
