#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "bseg/ad/grad_check.hpp"
#include "bseg/ad/ops.hpp"
#include "bseg/common/error.hpp"
#include "test_util.hpp"

namespace bseg::ad {
namespace {

using bseg::testing::random_away_from_zero;
using bseg::testing::random_tensor;

constexpr int kSeeds = 20;

// Projects an arbitrary output onto a scalar with fixed random weights, so
// every output element contributes an O(1) gradient.
Var project(Tape<double>& tape, Var out, std::uint64_t seed) {
  Rng rng(seed);
  auto w = random_tensor(tape.value(out).shape(), rng);
  return weighted_sum(tape, out, w);
}

TEST(Conv2dTest, IdentityKernel) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({1, 1, 3, 3}, 1.0f));
  auto k = tape.constant(Tensor<float>({1, 1, 1, 1}, 1.0f));
  auto y = conv2d(tape, x, k, 1, 0);
  EXPECT_EQ(tape.value(y), Tensor<float>({1, 1, 3, 3}, 1.0f));
}

TEST(Conv2dTest, SummationKernel) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({1, 1, 2, 2}, {1, 2, 3, 4}));
  auto k = tape.constant(Tensor<float>({1, 1, 2, 2}, 1.0f));
  auto y = conv2d(tape, x, k, 1, 0);
  ASSERT_EQ(tape.value(y).shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(tape.value(y)[0], 10.0f);
}

TEST(Conv2dTest, OutputSizeFormula) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({2, 3, 11, 9}));
  auto k = tape.constant(Tensor<float>({5, 3, 3, 3}));
  auto y = conv2d(tape, x, k, 2, 1);
  EXPECT_EQ(tape.value(y).shape(), (Shape{2, 5, (11 + 2 - 3) / 2 + 1, (9 + 2 - 3) / 2 + 1}));
}

TEST(Conv2dTest, ChannelMismatchNamesBothShapes) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({1, 3, 4, 4}));
  auto k = tape.constant(Tensor<float>({2, 4, 3, 3}));
  try {
    conv2d(tape, x, k, 1, 1);
    FAIL() << "expected a contract violation";
  } catch (const ContractViolation& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1x3x4x4]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2x4x3x3]"), std::string::npos) << msg;
  }
}

TEST(Conv2dTest, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(seed);
    const int stride = 1 + seed % 2;
    const int pad = seed % 3 == 0 ? 0 : 1;
    auto x = random_tensor({2, 4, 8, 8}, rng);
    auto k = random_tensor({6, 4, 3, 3}, rng);
    auto report = grad_check(
        [&](Tape<double>& t, std::span<const Var> v) { return project(t, conv2d(t, v[0], v[1], stride, pad), seed); },
        {x, k});
    EXPECT_TRUE(report.passed) << "seed " << seed << " err " << report.max_rel_error;
    EXPECT_EQ(report.checked, x.size() + k.size());
  }
}

TEST(Conv2dTest, PointwiseGradientsMatchFiniteDifferences) {
  Rng rng(3);
  auto x = random_tensor({3, 5, 4, 4}, rng);
  auto k = random_tensor({7, 5, 1, 1}, rng);
  auto report = grad_check(
      [&](Tape<double>& t, std::span<const Var> v) { return project(t, conv2d(t, v[0], v[1], 1, 0), 11); }, {x, k});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(MaxPoolTest, SingleWindow) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({1, 1, 2, 2}, {1, 2, 3, 4}));
  auto y = max_pool2x2(tape, x);
  EXPECT_EQ(tape.value(y).shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(tape.value(y)[0], 4.0f);
}

TEST(MaxPoolTest, TiesRouteToFirstElement) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1, 1, 4, 4}, 2.5));
  auto y = max_pool2x2(tape, x);
  EXPECT_EQ(tape.value(y), Tensor<double>({1, 1, 2, 2}, 2.5));
  tape.backward(sum(tape, y));
  const auto& g = tape.grad(x);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double expected = (r % 2 == 0 && c % 2 == 0) ? 1.0 : 0.0;
      EXPECT_EQ(g.at(0, 0, r, c), expected) << r << "," << c;
    }
  }
}

TEST(MaxPoolTest, OddDimsRejected) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({1, 1, 3, 4}));
  EXPECT_THROW(max_pool2x2(tape, x), ContractViolation);
}

TEST(MaxPoolTest, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(100 + seed);
    auto x = random_tensor({1, 3, 8, 8}, rng);
    auto report = grad_check([&](Tape<double>& t, Var v) { return project(t, max_pool2x2(t, v), seed); }, x);
    EXPECT_TRUE(report.passed) << "seed " << seed << " err " << report.max_rel_error;
  }
}

TEST(AvgPoolTest, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(200 + seed);
    auto x = random_tensor({2, 2, 6, 4}, rng);
    auto report = grad_check([&](Tape<double>& t, Var v) { return project(t, avg_pool2x2(t, v), seed); }, x);
    EXPECT_TRUE(report.passed) << "seed " << seed << " err " << report.max_rel_error;
  }
}

TEST(BatchNormTest, StandardizedChannelPassesThrough) {
  // Channel values {-1, 1} per position pair: mean 0, variance 1.
  Tape<double> tape;
  Tensor<double> xv({2, 1, 2, 2}, {-1, 1, -1, 1, 1, -1, 1, -1});
  auto x = tape.constant(xv);
  auto g = tape.constant(Tensor<double>({1}, 1.0));
  auto b = tape.constant(Tensor<double>({1}, 0.0));
  Tensor<double> rm({1}, 0.0), rv({1}, 1.0);
  auto y = batch_norm(tape, x, g, b, Mode::kTrain, rm, rv);
  for (std::size_t i = 0; i < xv.size(); ++i) EXPECT_NEAR(tape.value(y)[i], xv[i], 1e-5);
}

TEST(BatchNormTest, ZeroGammaGivesBeta) {
  Rng rng(1);
  Tape<double> tape;
  auto x = tape.constant(random_tensor({3, 2, 4, 4}, rng));
  auto g = tape.constant(Tensor<double>({2}, 0.0));
  auto b = tape.constant(Tensor<double>({2}, {0.25, -1.5}));
  Tensor<double> rm({2}, 0.0), rv({2}, 1.0);
  auto y = batch_norm(tape, x, g, b, Mode::kTrain, rm, rv);
  const auto& out = tape.value(y);
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t i = 0; i < 16; ++i) {
      EXPECT_EQ(out[(n * 2 + 0) * 16 + i], 0.25);
      EXPECT_EQ(out[(n * 2 + 1) * 16 + i], -1.5);
    }
  }
}

TEST(BatchNormTest, RunningStatsUpdateWithMomentum) {
  Tape<double> tape;
  // One channel, values 1..4: mean 2.5, biased var 1.25, unbiased 5/3.
  auto x = tape.constant(Tensor<double>({2, 1, 1, 2}, {1, 2, 3, 4}));
  auto g = tape.constant(Tensor<double>({1}, 1.0));
  auto b = tape.constant(Tensor<double>({1}, 0.0));
  Tensor<double> rm({1}, 0.0), rv({1}, 1.0);
  batch_norm(tape, x, g, b, Mode::kTrain, rm, rv);
  EXPECT_NEAR(rm[0], 0.1 * 2.5, 1e-12);
  EXPECT_NEAR(rv[0], 0.9 + 0.1 * 5.0 / 3.0, 1e-12);
}

TEST(BatchNormTest, SingleSampleTrainBatchRejected) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({1, 2, 3, 3}));
  auto g = tape.constant(Tensor<float>({2}, 1.0f));
  auto b = tape.constant(Tensor<float>({2}, 0.0f));
  Tensor<float> rm({2}), rv({2}, 1.0f);
  EXPECT_THROW(batch_norm(tape, x, g, b, Mode::kTrain, rm, rv), ContractViolation);
  EXPECT_NO_THROW(batch_norm(tape, x, g, b, Mode::kInfer, rm, rv));
}

TEST(BatchNormTest, TrainGradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(300 + seed);
    auto x = random_tensor({4, 3, 6, 6}, rng, 2.0);
    auto gamma = random_tensor({3}, rng);
    auto beta = random_tensor({3}, rng);
    auto report = grad_check(
        [&](Tape<double>& t, std::span<const Var> v) {
          Tensor<double> rm({3}), rv({3}, 1.0);
          return project(t, batch_norm(t, v[0], v[1], v[2], Mode::kTrain, rm, rv), seed);
        },
        {x, gamma, beta}, {.tolerance = 1e-3});
    EXPECT_TRUE(report.passed) << "seed " << seed << " err " << report.max_rel_error;
  }
}

TEST(BatchNormTest, InferGradientsMatchFiniteDifferences) {
  Rng rng(7);
  auto x = random_tensor({2, 3, 4, 4}, rng);
  auto gamma = random_tensor({3}, rng);
  auto beta = random_tensor({3}, rng);
  Tensor<double> rm({3}, {0.1, -0.2, 0.3}), rv({3}, {0.5, 1.5, 2.0});
  auto report = grad_check(
      [&](Tape<double>& t, std::span<const Var> v) {
        return project(t, batch_norm(t, v[0], v[1], v[2], Mode::kInfer, rm, rv), 9);
      },
      {x, gamma, beta});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(ReluTest, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(400 + seed);
    auto x = random_away_from_zero({2, 3, 5, 5}, rng);
    auto report = grad_check([&](Tape<double>& t, Var v) { return project(t, relu(t, v), seed); }, x);
    EXPECT_TRUE(report.passed) << "seed " << seed;
    EXPECT_EQ(report.skipped_kinks, 0u);
  }
}

TEST(SigmoidTest, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(500 + seed);
    auto x = random_tensor({3, 7}, rng, 3.0);
    auto report = grad_check([&](Tape<double>& t, Var v) { return project(t, sigmoid(t, v), seed); }, x);
    EXPECT_TRUE(report.passed) << "seed " << seed << " err " << report.max_rel_error;
  }
}

TEST(SigmoidTest, SaturatesWithoutOverflow) {
  Tape<float> tape;
  auto y = sigmoid(tape, tape.constant(Tensor<float>({2}, {-200.0f, 200.0f})));
  EXPECT_TRUE(tape.value(y).all_finite());
  EXPECT_EQ(tape.value(y)[1], 1.0f);
}

TEST(FullyConnectedTest, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(600 + seed);
    auto x = random_tensor({2, 10}, rng);
    auto w = random_tensor({10, 7}, rng);
    auto b = random_tensor({7}, rng);
    auto report = grad_check(
        [&](Tape<double>& t, std::span<const Var> v) { return project(t, fully_connected(t, v[0], v[1], v[2]), seed); },
        {x, w, b});
    EXPECT_TRUE(report.passed) << "seed " << seed << " err " << report.max_rel_error;
  }
}

TEST(FullyConnectedTest, ShapeMismatchRejected) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({2, 10}));
  auto w = tape.constant(Tensor<float>({9, 7}));
  auto b = tape.constant(Tensor<float>({7}));
  EXPECT_THROW(fully_connected(tape, x, w, b), ContractViolation);
}

TEST(ConcatTest, ChannelsAddAndGradientSplitsBack) {
  Rng rng(5);
  Tape<double> tape;
  auto a = tape.leaf(random_tensor({2, 3, 4, 4}, rng));
  auto b = tape.leaf(random_tensor({2, 5, 4, 4}, rng));
  const Var parts[] = {a, b};
  auto c = concat_channels(tape, std::span<const Var>(parts));
  ASSERT_EQ(tape.value(c).shape(), (Shape{2, 8, 4, 4}));
  auto seed = random_tensor({2, 8, 4, 4}, rng);
  tape.backward(c, seed);
  // The gradient of each input is exactly its slice of the seed.
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t ch = 0; ch < 8; ++ch) {
      for (std::size_t i = 0; i < 16; ++i) {
        const double g = ch < 3 ? tape.grad(a)[(n * 3 + ch) * 16 + i] : tape.grad(b)[(n * 5 + ch - 3) * 16 + i];
        EXPECT_EQ(g, seed[(n * 8 + ch) * 16 + i]);
      }
    }
  }
}

TEST(ConcatTest, SpatialMismatchRejected) {
  Tape<float> tape;
  auto a = tape.constant(Tensor<float>({1, 3, 4, 4}));
  auto b = tape.constant(Tensor<float>({1, 3, 4, 2}));
  const Var parts[] = {a, b};
  EXPECT_THROW(concat_channels(tape, std::span<const Var>(parts)), ContractViolation);
}

TEST(ConcatTest, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(700 + seed);
    auto a = random_tensor({2, 2, 3, 3}, rng);
    auto b = random_tensor({2, 4, 3, 3}, rng);
    auto report = grad_check(
        [&](Tape<double>& t, std::span<const Var> v) { return project(t, concat_channels(t, v), seed); }, {a, b});
    EXPECT_TRUE(report.passed) << "seed " << seed;
  }
}

TEST(DropoutTest, RateZeroIsIdentity) {
  Rng rng(1);
  auto xv = random_tensor<float>({2, 3, 4, 4}, rng);
  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    Tape<float> tape;
    auto y = dropout(tape, tape.constant(xv), 0.0, mode, rng);
    EXPECT_EQ(tape.value(y), xv);
  }
}

TEST(DropoutTest, InferModeIsBitwiseIdentity) {
  Rng rng(2);
  auto xv = random_tensor<float>({2, 3, 4, 4}, rng);
  Tape<float> tape;
  auto y = dropout(tape, tape.constant(xv), 0.5, Mode::kInfer, rng);
  EXPECT_EQ(tape.value(y), xv);
}

TEST(DropoutTest, InvertedScalingPreservesExpectation) {
  Rng rng(3);
  const double rate = 0.1;
  const std::size_t n = 10000;
  Tape<double> tape;
  auto y = dropout(tape, tape.constant(Tensor<double>({n}, 3.0)), rate, Mode::kTrain, rng);
  double mean = 0.0;
  for (double v : tape.value(y).data()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 3.0 / (1.0 - rate)) < 1e-12);
    mean += v;
  }
  mean /= n;
  EXPECT_NEAR(mean, 3.0, 0.02 * 3.0);
}

TEST(DropoutTest, RejectsRateOutOfRange) {
  Rng rng(0);
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({4}));
  EXPECT_THROW(dropout(tape, x, 1.0, Mode::kTrain, rng), ContractViolation);
  EXPECT_THROW(dropout(tape, x, -0.1, Mode::kTrain, rng), ContractViolation);
}

TEST(DropoutTest, GradientUsesSameMask) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng data_rng(800 + seed);
    auto x = random_tensor({3, 8}, data_rng);
    auto report = grad_check(
        [&](Tape<double>& t, Var v) {
          Rng mask_rng(seed);
          return project(t, dropout(t, v, 0.3, Mode::kTrain, mask_rng), seed);
        },
        x);
    EXPECT_TRUE(report.passed) << "seed " << seed;
  }
}

TEST(ReshapeTest, CountMismatchRejected) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({2, 3}));
  EXPECT_THROW(reshape(tape, x, {7}), ContractViolation);
  EXPECT_EQ(tape.value(reshape(tape, x, {3, 2})).shape(), (Shape{3, 2}));
}

TEST(BinaryCrossEntropyTest, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(900 + seed);
    Tensor<double> p({4, 6}), y({4, 6});
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = uniform(rng, 0.05, 0.95);
      y[i] = uniform01(rng) < 0.5 ? 0.0 : 1.0;
    }
    auto report =
        grad_check([&](Tape<double>& t, Var v) { return binary_cross_entropy(t, v, y); }, p, {.tolerance = 1e-6});
    EXPECT_TRUE(report.passed) << "seed " << seed << " err " << report.max_rel_error;
  }
}

TEST(TapeTest, FanOutAccumulatesAdditively) {
  // y = x0 + x0 + 2 * x0 via three consumers; dy/dx0 = 4 everywhere.
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
  const Var parts[] = {x, x};
  auto c = concat_channels(tape, std::span<const Var>(parts));
  auto s1 = sum(tape, c);
  auto s2 = weighted_sum(tape, x, Tensor<double>({1, 1, 2, 2}, 2.0));
  const Var both[] = {reshape(tape, s1, {1, 1, 1, 1}), reshape(tape, s2, {1, 1, 1, 1})};
  auto total = sum(tape, concat_channels(tape, std::span<const Var>(both)));
  const auto visited = tape.backward(total);
  for (double g : tape.grad(x).data()) EXPECT_EQ(g, 4.0);
  // Every recorded primitive (all but the leaf) ran exactly once.
  EXPECT_EQ(visited, tape.size() - 1);
}

TEST(TapeTest, ConstantsCarryNoGradient) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({3}, 1.0f));
  auto y = sum(tape, x);
  EXPECT_FALSE(tape.requires_grad(y));
  EXPECT_EQ(tape.backward(y), 0u);
  EXPECT_TRUE(tape.grad(x).empty());
}

TEST(GradCheckTest, SumHasExactUnitGradient) {
  Tensor<double> x({3, 4});
  std::iota(x.data().begin(), x.data().end(), -5.0);
  // Power-of-two step on integer points: the difference quotient is exact.
  auto report = grad_check([](Tape<double>& t, Var v) { return sum(t, v); }, x, {.eps = 0x1.0p-16});
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.max_rel_error, 0.0);
  EXPECT_EQ(report.checked, 12u);
}

TEST(GradCheckTest, HalfSquaredNormHasGradientX) {
  Rng rng(42);
  auto x = random_tensor({5, 5}, rng);
  auto report = grad_check([](Tape<double>& t, Var v) { return half_squared_norm(t, v); }, x);
  EXPECT_LT(report.max_rel_error, 1e-8);
}

TEST(GradCheckTest, NonFiniteEvaluationThrows) {
  Tensor<double> p({2}, {0.5, 0.5});
  auto fn = [](Tape<double>& t, Var v) {
    Tensor<double> w({2}, std::numeric_limits<double>::infinity());
    return weighted_sum(t, v, w);
  };
  EXPECT_THROW(grad_check(fn, p), Error);
}

TEST(GradCheckTest, SkipsProbesAcrossKinks) {
  // relu kink straddled by the probe is skipped, not reported as an error.
  Tensor<double> x({2}, {1e-7, 2.0});
  auto report = grad_check([](Tape<double>& t, Var v) { return sum(t, relu(t, v)); }, x);
  EXPECT_EQ(report.skipped_kinks, 1u);
  EXPECT_EQ(report.checked, 1u);
  EXPECT_TRUE(report.passed);
}

TEST(TensorTest, InvariantsEnforced) {
  EXPECT_THROW(Tensor<float>({2, 0}), ContractViolation);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ContractViolation);
  Tensor<float> t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_TRUE(t.all_finite());
}

}  // namespace
}  // namespace bseg::ad
