#include <gtest/gtest.h>

#include <cmath>

#include "grad_cases.hpp"
#include "pathe/gradcheck.hpp"
#include "pathe/ops.hpp"

namespace pathe::ad {
namespace {

constexpr double kGradTolerance = 1e-4;

TEST(Tensor, ValidatesShapes) {
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  Tensor<float> t(Shape{2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.at(1, 2), 1.5f);
  EXPECT_THROW(t.reshaped(Shape{4}), ShapeError);
  EXPECT_EQ(t.reshaped(Shape{3, 2}).shape(), (Shape{3, 2}));
}

TEST(Ops, ShapeErrorsNameTheOp) {
  Tape<float> tape;
  auto a = tape.constant(Tensor<float>(Shape{2, 3}));
  auto b = tape.constant(Tensor<float>(Shape{2, 3}));
  try {
    matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2, 3]"), std::string::npos);
  }
  EXPECT_THROW(add(a, tape.constant(Tensor<float>(Shape{2}))), ShapeError);
  EXPECT_THROW(concat<float>({a, tape.constant(Tensor<float>(Shape{3, 3}))}, 1), ShapeError);
  std::vector<std::size_t> bad{2};
  EXPECT_THROW(embedding_lookup(a, std::span<const std::size_t>(bad)), ShapeError);
}

TEST(Ops, MatmulMatchesHandComputation) {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>(Shape{2, 2}, {1, 2, 3, 4}));
  auto b = tape.constant(Tensor<double>(Shape{2, 1}, {5, 6}));
  EXPECT_EQ(matmul(a, b).value().values(), (std::vector<double>{17, 39}));
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>(Shape{2, 3}, {1, 2, 3, -1, 0, 1000}));
  auto y = softmax(x, 1).value();
  EXPECT_NEAR(y[0] + y[1] + y[2], 1.0, 1e-12);
  EXPECT_NEAR(y[5], 1.0, 1e-12);
  auto l = log_softmax(x, 1).value();
  EXPECT_NEAR(std::exp(l[0]) + std::exp(l[1]) + std::exp(l[2]), 1.0, 1e-12);
  EXPECT_TRUE(std::isfinite(l[3]));
}

TEST(Ops, LayerNormNormalisesRows) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>(Shape{1, 4}, {1, 2, 3, 4}));
  auto g = tape.constant(Tensor<double>(Shape{4}, 1.0));
  auto b = tape.constant(Tensor<double>(Shape{4}, 0.0));
  auto y = layer_norm(x, g, b).value();
  EXPECT_NEAR(y[0] + y[1] + y[2] + y[3], 0.0, 1e-12);
  EXPECT_NEAR(y[3], 3.0 / std::sqrt(5.0 + 4e-5), 1e-6);
}

TEST(Ops, DropoutIdentityWhenNotTraining) {
  Tape<float> tape;
  Rng rng(0);
  auto x = tape.constant(Tensor<float>(Shape{10}, 2.0f));
  EXPECT_EQ(dropout(x, 0.5f, false, rng).node(), x.node());
  auto y = dropout(x, 0.5f, true, rng).value();
  for (float v : y.data()) EXPECT_TRUE(v == 0.0f || v == 4.0f);
}

TEST(Ops, AttentionIgnoresMaskedKeys) {
  Tape<double> tape;
  Tensor<double> q(Shape{3, 2}, {1, 0, 0, 1, 1, 1});
  Tensor<double> k(Shape{3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor<double> v(Shape{3, 2}, {1, 1, 2, 2, 3, 3});
  const std::vector<std::uint8_t> mask{1, 1, 0};
  auto out = multi_head_attention(tape.constant(q), tape.constant(k), tape.constant(v), mask, 3, 1).value();
  Tensor<double> v2 = v;
  v2.at(2, 0) = 100;
  Tensor<double> k2 = k;
  k2.at(2, 1) = -50;
  auto out2 = multi_head_attention(tape.constant(q), tape.constant(k2), tape.constant(v2), mask, 3, 1).value();
  EXPECT_EQ(out.values(), out2.values());
  const std::vector<std::uint8_t> none{0, 0, 0};
  auto zero = multi_head_attention(tape.constant(q), tape.constant(k), tape.constant(v), none, 3, 1).value();
  for (double x : zero.data()) EXPECT_EQ(x, 0.0);
}

TEST(Ops, CrossEntropyClosedForms) {
  Tape<double> tape;
  std::vector<std::size_t> one{1};
  auto saturated = cross_entropy(tape.constant(Tensor<double>(Shape{1, 2}, {0, 10})),
                                 std::span<const std::size_t>(one));
  EXPECT_NEAR(saturated.value().item(), std::log1p(std::exp(-10.0)), 1e-12);
  EXPECT_NEAR(saturated.value().item(), 4.54e-5, 1e-7);
  std::vector<std::size_t> three{3};
  auto uniform = cross_entropy(tape.constant(Tensor<double>(Shape{1, 11}, 0.7)),
                               std::span<const std::size_t>(three));
  EXPECT_NEAR(uniform.value().item(), std::log(11.0), 1e-12);
}

TEST(Ops, BceWithLogitsIsStable) {
  Tape<double> tape;
  std::vector<double> targets{1, 0};
  auto loss = bce_with_logits(tape.constant(Tensor<double>(Shape{2}, {800, -800})),
                              std::span<const double>(targets));
  EXPECT_NEAR(loss.value().item(), 0.0, 1e-12);
  std::vector<double> zero{1, 0};
  auto ln2 = bce_with_logits(tape.constant(Tensor<double>(Shape{2}, 0.0)), std::span<const double>(zero));
  EXPECT_NEAR(ln2.value().item(), 2 * std::log(2.0), 1e-12);
}

TEST(Tape, ParameterGradientsAccumulateUntilZeroed) {
  Parameter<double> p("p", Tensor<double>(Shape{2}, {1, 2}));
  for (int i = 0; i < 2; ++i) {
    Tape<double> tape;
    tape.backward(sum(scale(tape.watch(p), 3.0)));
  }
  EXPECT_EQ(p.grad().values(), (std::vector<double>{6, 6}));
  p.zero_grad();
  EXPECT_EQ(p.grad().values(), (std::vector<double>{0, 0}));
}

TEST(Tape, BackwardRequiresScalar) {
  Tape<double> tape;
  auto v = tape.variable(Tensor<double>(Shape{2}, 1.0));
  EXPECT_THROW(tape.backward(scale(v, 2.0)), ShapeError);
}

TEST(GradCheck, EveryOpMatchesCentralDifferences) {
  for (auto& c : testing::op_grad_cases()) {
    auto r = grad_check(c.f, c.inputs);
    EXPECT_LT(r.max_rel_error, kGradTolerance)
        << c.name << ": worst " << r.worst_param << "[" << r.worst_index << "] analytic "
        << r.analytic << " numeric " << r.numeric;
    EXPECT_GT(r.checked, 0u);
  }
}

TEST(GradCheck, FullLossesMatchCentralDifferences) {
  std::vector<testing::GradCase> cases;
  cases.push_back(testing::rp_loss_case());
  cases.push_back(testing::lp_loss_case(true));
  cases.push_back(testing::lp_loss_case(false));
  for (auto& c : cases) {
    auto r = grad_check(c.f, c.inputs);
    EXPECT_LT(r.max_rel_error, kGradTolerance)
        << c.name << ": worst " << r.worst_param << "[" << r.worst_index << "] analytic "
        << r.analytic << " numeric " << r.numeric;
  }
}

}  // namespace
}  // namespace pathe::ad
