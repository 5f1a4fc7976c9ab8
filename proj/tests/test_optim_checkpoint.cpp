#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "pathe/checkpoint.hpp"
#include "pathe/ops.hpp"
#include "pathe/optim.hpp"
#include "support.hpp"

namespace pathe::ad {
namespace {

TEST(Adam, MatchesScalarReference) {
  // Minimise sum((x - 3)^2) from x = [0, 10]; compare with a straight-line
  // scalar Adam.
  ParameterSet<double> params;
  auto& x = params.add("x", Tensor<double>(Shape{2}, {0.0, 10.0}));
  Adam<double> adam({.lr = 0.1});
  double ref[2] = {0.0, 10.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int step = 1; step <= 25; ++step) {
    params.zero_grad();
    {
      Tape<double> tape;
      auto shifted = add(tape.watch(x), tape.constant(Tensor<double>(Shape{2}, -3.0)));
      auto flat = reshape(shifted, Shape{1, 2});
      tape.backward(sum(matmul(flat, reshape(shifted, Shape{2, 1}))));
    }
    adam.step(params);
    for (int i = 0; i < 2; ++i) {
      const double g = 2.0 * (ref[i] - 3.0);
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, step));
      const double vh = v[i] / (1 - std::pow(0.999, step));
      ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    EXPECT_NEAR(x.value()[0], ref[0], 1e-12);
    EXPECT_NEAR(x.value()[1], ref[1], 1e-12);
  }
  EXPECT_EQ(adam.steps(), 25u);
}

TEST(Adam, NonFiniteGradientNamesTheParameter) {
  ParameterSet<float> params;
  params.add("ok", Tensor<float>(Shape{1}));
  auto& bad = params.add("bad_weight", Tensor<float>(Shape{2}));
  bad.grad()[1] = std::numeric_limits<float>::quiet_NaN();
  Adam<float> adam;
  try {
    adam.step(params);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("bad_weight"), std::string::npos);
  }
  EXPECT_EQ(params[0].value()[0], 0.0f);
}

TEST(ParameterSet, RejectsDuplicateNamesAndCounts) {
  ParameterSet<float> params;
  params.add("a", Tensor<float>(Shape{2, 3}));
  params.add("b", Tensor<float>(Shape{4}));
  EXPECT_THROW(params.add("a", Tensor<float>(Shape{1})), std::invalid_argument);
  EXPECT_EQ(params.count(), 10u);
  EXPECT_NE(params.find("b"), nullptr);
  EXPECT_EQ(params.find("c"), nullptr);
}

TEST(Checkpoint, RoundTripsExactly) {
  auto dir = testing::temp_dir("ckpt");
  ParameterSet<float> params;
  params.add("w", Tensor<float>(Shape{2, 2}, {1.5f, -2.25f, 3e-8f, 7.0f}));
  params.add("b", Tensor<float>(Shape{3}, {0.1f, 0.2f, 0.3f}));
  save_checkpoint(dir / "m.ckpt", params);
  ParameterSet<float> other;
  other.add("b", Tensor<float>(Shape{3}));
  other.add("w", Tensor<float>(Shape{2, 2}));
  load_checkpoint(dir / "m.ckpt", other);
  EXPECT_EQ(other.find("w")->value(), params.find("w")->value());
  EXPECT_EQ(other.find("b")->value(), params.find("b")->value());
  auto raw = read_checkpoint(dir / "m.ckpt");
  ASSERT_EQ(raw.size(), 2u);
  EXPECT_EQ(raw[0].name, "w");
}

TEST(Checkpoint, DetectsDamageAndMismatch) {
  auto dir = testing::temp_dir("ckpt_bad");
  ParameterSet<float> params;
  params.add("w", Tensor<float>(Shape{4}, 1.0f));
  save_checkpoint(dir / "m.ckpt", params);
  std::string bytes = testing::read_file(dir / "m.ckpt");
  std::ofstream(dir / "cut.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(read_checkpoint(dir / "cut.ckpt"), CheckpointError);
  std::ofstream(dir / "junk.ckpt", std::ios::binary) << "not a checkpoint";
  EXPECT_THROW(read_checkpoint(dir / "junk.ckpt"), CheckpointError);
  EXPECT_THROW(read_checkpoint(dir / "absent.ckpt"), CheckpointError);

  ParameterSet<float> wrong_shape;
  wrong_shape.add("w", Tensor<float>(Shape{2, 2}));
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", wrong_shape), CheckpointError);
  ParameterSet<float> missing;
  missing.add("v", Tensor<float>(Shape{4}));
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", missing), CheckpointError);
}

}  // namespace
}  // namespace pathe::ad
