#include <cmath>

#include <gtest/gtest.h>

#include "cvla/autodiff.hpp"
#include "cvla/errors.hpp"
#include "cvla/gradcheck.hpp"
#include "cvla/mlp.hpp"
#include "cvla/ops.hpp"
#include "cvla/random.hpp"

namespace cvla {
namespace {

TensorD random_tensor(Shape dims, Rng& rng, double scale = 1.0) {
  TensorD t(std::move(dims));
  for (double& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

TEST(Tensor, RejectsDataLengthMismatch) {
  EXPECT_THROW(TensorD({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST(Tensor, CastRoundTripsExactlyRepresentableValues) {
  const TensorD t = TensorD::matrix({{0.5, -2.0}, {3.0, 1024.0}});
  EXPECT_TRUE(bitwise_equal(t.cast<float>().cast<double>(), t));
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Rng rng(3);
  const TensorD a = random_tensor({3, 3}, rng);
  const TensorD eye = TensorD::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  EXPECT_TRUE(bitwise_equal(matmul(eye, a), a));
  EXPECT_TRUE(bitwise_equal(matmul(a, eye), a));
}

TEST(Matmul, HandArithmetic) {
  const TensorD out = matmul(TensorD::matrix({{1, 2}}), TensorD::matrix({{3}, {4}}));
  ASSERT_EQ(out.dims(), (Shape{1, 1}));
  EXPECT_EQ(out[0], 11.0);
}

TEST(Matmul, ZeroLeftOperandGivesZeros) {
  Rng rng(1);
  const TensorD out = matmul(TensorD({2, 2}), random_tensor({2, 5}, rng));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(TensorD({2, 3}), TensorD({4, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, TransposedVariantsAgreeWithExplicitTranspose) {
  Rng rng(5);
  const TensorD a = random_tensor({3, 4}, rng), b = random_tensor({5, 4}, rng);
  EXPECT_TRUE(bitwise_equal(matmul_bt(a, b), matmul(a, transpose(b))));
  const TensorD c = random_tensor({3, 2}, rng);
  EXPECT_TRUE(bitwise_equal(matmul_at(a, c), matmul(transpose(a), c)));
}

TEST(Softmax, ConstantRowIsUniform) {
  const TensorD out = softmax_rows(TensorD::matrix({{4.0, 4.0, 4.0}}));
  for (double v : out.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ClosedForm) {
  const TensorD out = softmax_rows(TensorD::matrix({{0.0, std::log(3.0)}}));
  EXPECT_NEAR(out[0], 0.25, 1e-15);
  EXPECT_NEAR(out[1], 0.75, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const TensorD out = softmax_rows(TensorD::matrix({{1000.0, 0.0}}));
  EXPECT_TRUE(out.all_finite());
  EXPECT_NEAR(out[0], 1.0, 1e-12);
  EXPECT_NEAR(out[1], 0.0, 1e-12);
}

TEST(Softmax, RowsSumToOneOnRandomInputs) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng.index(6), cols = 1 + rng.index(40);
    const TensorD out = softmax_rows(random_tensor({rows, cols}, rng, 50.0));
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        EXPECT_GE(out.at(r, c), 0.0);
        total += out.at(r, c);
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(Mlp, IdentityLayerPassesInputThrough) {
  const Mlp mlp{{LinearMap::identity(3)}, Activation::gelu};
  const TensorD x = TensorD::vector({0.25, -1.5, 7.0});
  EXPECT_TRUE(bitwise_equal(mlp_forward(mlp, x), x));
}

TEST(Mlp, SingleAffineLayer) {
  const Mlp mlp{{LinearMap{TensorD::matrix({{2.0}}), TensorD::vector({1.0})}}, Activation::gelu};
  EXPECT_EQ(mlp_forward(mlp, TensorD::vector({3.0}))[0], 7.0);
}

TEST(Mlp, ReluClampsNegativePreActivation) {
  // hidden = [x - 2, x + 1]; out = 3*relu(h0) + 5*relu(h1) + 0.5
  const Mlp mlp{{LinearMap{TensorD::matrix({{1.0, 1.0}}), TensorD::vector({-2.0, 1.0})},
                 LinearMap{TensorD::matrix({{3.0}, {5.0}}), TensorD::vector({0.5})}},
                Activation::relu};
  EXPECT_EQ(mlp_forward(mlp, TensorD::vector({1.0}))[0], 10.5);
  EXPECT_EQ(mlp_forward(mlp, TensorD::vector({4.0}))[0], 31.5);
}

TEST(Mlp, InputWidthMismatchIsShapeError) {
  const Mlp mlp{{LinearMap::identity(3)}, Activation::gelu};
  EXPECT_THROW(mlp_forward(mlp, TensorD::vector({1.0, 2.0})), ShapeError);
}

TEST(Mlp, BrokenLayerChainIsShapeError) {
  const Mlp mlp{{LinearMap::zeros(2, 3), LinearMap::zeros(4, 1)}, Activation::gelu};
  EXPECT_THROW(mlp.validate(), ShapeError);
}

TEST(Gelu, MatchesErfForm) {
  const TensorD x = TensorD::vector({-2.0, -0.5, 0.0, 0.7, 3.0});
  const TensorD y = gelu(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(y[i], 0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0))), 1e-15);
  }
}

TEST(Gradients, LinearObjectiveGivesCoefficients) {
  TensorD theta = TensorD::vector({0.3, -1.2, 4.0});
  const TensorD c = TensorD::vector({2.0, -3.0, 0.5});
  const Objective f = [&](ParamBinder<double>& bind) { return ad::weighted_sum(bind(theta), c); };
  const GradientMap g = gradients(f, {{"theta", &theta}});
  EXPECT_TRUE(bitwise_equal(g.at("theta"), c));
}

TEST(Gradients, SoftmaxRowSumHasZeroGradient) {
  Rng rng(2);
  TensorD theta = random_tensor({3, 4}, rng);
  const Objective f = [&](ParamBinder<double>& bind) {
    return ad::sum(ad::softmax_rows(bind(theta)));
  };
  const GradientMap g = gradients(f, {{"theta", &theta}});
  for (double v : g.at("theta").data()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Gradients, NonScalarObjectiveIsContractError) {
  TensorD theta = TensorD::vector({1.0, 2.0});
  const Objective f = [&](ParamBinder<double>& bind) { return bind(theta); };
  EXPECT_THROW(gradients(f, {{"theta", &theta}}), ContractError);
}

TEST(Gradients, UnreachedParameterGetsZeros) {
  TensorD used = TensorD::vector({1.0}), unused = TensorD::vector({5.0, 6.0});
  const Objective f = [&](ParamBinder<double>& bind) { return ad::sum_squares(bind(used)); };
  const GradientMap g = gradients(f, {{"used", &used}, {"unused", &unused}});
  EXPECT_EQ(g.at("used")[0], 2.0);
  for (double v : g.at("unused").data()) EXPECT_EQ(v, 0.0);
}

TEST(Gradients, SharedParameterAccumulatesAcrossUses) {
  TensorD theta = TensorD::vector({3.0});
  const Objective f = [&](ParamBinder<double>& bind) {
    return ad::sum(ad::hadamard(bind(theta), bind(theta)));
  };
  EXPECT_EQ(gradients(f, {{"theta", &theta}}).at("theta")[0], 6.0);
}

TEST(FiniteDiff, QuadraticAtThree) {
  TensorD theta = TensorD::vector({3.0});
  const Objective f = [&](ParamBinder<double>& bind) { return ad::sum_squares(bind(theta)); };
  const FiniteDiffReport report = finite_diff_check(f, {{"theta", &theta}}, 1e-5);
  EXPECT_NEAR(report.analytic_at_worst, 6.0, 1e-9);
  EXPECT_NEAR(report.numeric_at_worst, 6.0, 1e-9);
  EXPECT_EQ(theta[0], 3.0);
}

TEST(FiniteDiff, ConstantObjectiveHasZeroGradients) {
  TensorD theta = TensorD::vector({1.0, 2.0});
  const TensorD k = TensorD::vector({4.0});
  const Objective f = [&](ParamBinder<double>&) { return ad::sum(Var<double>::constant(k)); };
  const FiniteDiffReport report = finite_diff_check(f, {{"theta", &theta}}, 1e-5);
  EXPECT_EQ(report.max_rel_error, 0.0);
  EXPECT_EQ(report.analytic_at_worst, 0.0);
  EXPECT_EQ(report.numeric_at_worst, 0.0);
}

TEST(FiniteDiff, NonPositiveStepIsContractError) {
  TensorD theta = TensorD::vector({1.0});
  const Objective f = [&](ParamBinder<double>& bind) { return ad::sum(bind(theta)); };
  EXPECT_THROW(finite_diff_check(f, {{"theta", &theta}}, 0.0), ContractError);
}

// Every differentiable primitive, each composed into a scalar with a random weighting so
// that no gradient is trivially constant.
class PrimitiveGradients : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradients, MatchFiniteDifferences) {
  const int seed = GetParam();
  Rng rng(static_cast<std::uint64_t>(seed));
  TensorD a = random_tensor({4, 3}, rng), b = random_tensor({3, 5}, rng);
  TensorD c = random_tensor({4, 3}, rng), bias = random_tensor({3}, rng);
  TensorD q = random_tensor({2, 3}, rng), keys = random_tensor({6, 3}, rng);
  TensorD logits = random_tensor({3, 4}, rng);
  const std::size_t rows[] = {3, 0, 3, 1};
  const std::size_t labels[] = {1, 3, 0};
  const TensorD w_mm = random_tensor({4, 5}, rng), w_bt = random_tensor({4, 4}, rng);
  const TensorD w_ew = random_tensor({4, 3}, rng), w_grp = random_tensor({2, 3}, rng);
  const TensorD w_cat = random_tensor({8, 3}, rng), w_gather = random_tensor({4, 3}, rng);
  const TensorD w_slice = random_tensor({2, 2}, rng), w_scores = random_tensor({2, 3}, rng);

  const Objective f = [&](ParamBinder<double>& bind) {
    const Var<double> va = bind(a), vb = bind(b), vc = bind(c), vbias = bind(bias);
    const Var<double> vq = bind(q), vk = bind(keys);
    std::vector<Var<double>> terms;
    terms.push_back(ad::weighted_sum(ad::matmul(va, vb), w_mm));
    terms.push_back(ad::weighted_sum(ad::matmul_bt(va, vc), w_bt));
    terms.push_back(ad::weighted_sum(ad::softmax_rows(ad::add(va, vc)), w_ew));
    terms.push_back(ad::weighted_sum(ad::gelu(ad::add_bias(va, vbias)), w_ew));
    terms.push_back(ad::weighted_sum(ad::mul_bias(va, vbias), w_ew));
    terms.push_back(ad::weighted_sum(ad::relu(ad::hadamard(va, vc)), w_ew));
    terms.push_back(ad::weighted_sum(ad::scale(ad::hadamard(va, va), 0.7), w_ew));
    terms.push_back(ad::weighted_sum(ad::concat_rows<double>({va, vc}), w_cat));
    terms.push_back(ad::weighted_sum(ad::gather_rows(vc, rows), w_gather));
    terms.push_back(ad::weighted_sum(ad::slice_flat(ad::reshape(vb, {15}), 3, {2, 2}), w_slice));
    terms.push_back(ad::weighted_sum(ad::group_mean_rows(vk, 3), w_grp));
    const Var<double> scores = ad::softmax_rows(ad::grouped_scores(vq, vk));
    terms.push_back(ad::weighted_sum(scores, w_scores));
    terms.push_back(ad::weighted_sum(ad::grouped_mix(scores, vk), w_grp));
    terms.push_back(ad::cross_entropy(bind(logits), labels));
    terms.push_back(ad::scale(ad::sum_squares(vc), 0.1));
    Var<double> total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
    return total;
  };
  const FiniteDiffReport report = finite_diff_check(
      f,
      {{"a", &a}, {"b", &b}, {"c", &c}, {"bias", &bias}, {"q", &q}, {"keys", &keys},
       {"logits", &logits}},
      1e-5);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param << "[" << report.worst_index << "]";
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveGradients, ::testing::Range(0, 20));

TEST(FlopCounter, CountsMatmulAndNests) {
  FlopCounter outer;
  matmul(TensorD({2, 3}), TensorD({3, 4}));
  {
    FlopCounter inner;
    softmax_rows(TensorD({2, 5}));
    EXPECT_EQ(inner.total(), 50u);
  }
  EXPECT_EQ(outer.total(), 48u);
}

TEST(Determinism, RepeatedEvaluationIsBitIdentical) {
  Rng rng(9);
  const TensorD a = random_tensor({5, 7}, rng), b = random_tensor({7, 3}, rng);
  EXPECT_TRUE(bitwise_equal(softmax_rows(matmul(a, b)), softmax_rows(matmul(a, b))));
}

}  // namespace
}  // namespace cvla
