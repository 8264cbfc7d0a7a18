#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>
#include <string>

#include "ofs/ops.hpp"
#include "oracles.hpp"

using namespace ofs;
using oracle::random_bank;
using oracle::random_tensor;

TEST(Tensor, ShapeAndIndexing) {
  Tensor t({2, 3, 4, 5}, 1.5);
  EXPECT_EQ(t.size(), 120u);
  EXPECT_EQ(t.rank(), 4u);
  t.at(1, 2, 3, 4) = 7.0;
  EXPECT_EQ(t[t.size() - 1], 7.0);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), std::invalid_argument);
  Tensor scalar;
  EXPECT_EQ(scalar.rank(), 0u);
  EXPECT_EQ(scalar.size(), 1u);
}

TEST(FilterBank, RejectsEvenAndNonSquare) {
  EXPECT_THROW(FilterBank(Tensor({1, 1, 4, 4})), std::invalid_argument);
  EXPECT_THROW(FilterBank(Tensor({1, 1, 3, 5})), std::invalid_argument);
  EXPECT_NO_THROW(FilterBank(Tensor({2, 1, 5, 5})));
}

TEST(Conv2dSame, DeltaFilterIsIdentity) {
  Rng rng(1);
  const Tensor x = random_tensor({2, 3, 6, 5}, rng);
  FilterBank f(3, 3, 5);
  for (std::size_t c = 0; c < 3; ++c) f.at(c, c, 2, 2) = 1.0;
  const Tensor y = conv2d_same(x, f, std::vector<double>(3, 0.0));
  EXPECT_EQ(y, x);
}

TEST(Conv2dSame, OnesFilterOnConstantInput) {
  const double c = 1.75;
  const Tensor x({1, 1, 5, 6}, c);
  FilterBank f(1, 1, 3);
  f.weights().fill(1.0);
  const Tensor y = conv2d_same(x, f, std::vector<double>{0.0});
  EXPECT_DOUBLE_EQ(y.at(0, 0, 2, 2), 9 * c);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0), 4 * c);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 4, 5), 4 * c);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 3), 6 * c);
}

TEST(Conv2dSame, MatchesNestedLoopOracle) {
  Rng rng(2);
  const Tensor x = random_tensor({2, 3, 7, 7}, rng);
  const FilterBank f = random_bank(4, 3, 5, rng);
  const std::vector<double> bias{0.1, -0.2, 0.3, 0.0};
  EXPECT_LE(max_abs_diff(conv2d_same(x, f, bias), oracle::conv_same(x, f, bias)), 1e-12);
}

TEST(Conv2dSame, MatchesOracleAcrossShapes) {
  Rng rng(3);
  for (std::size_t s : {1u, 3u, 5u, 7u, 9u}) {
    for (std::size_t cout : {1u, 3u, 4u, 6u}) {
      const Tensor x = random_tensor({2, 2, 5 + s % 3, 9}, rng);
      const FilterBank f = random_bank(cout, 2, s, rng);
      const std::vector<double> bias(cout, 0.25);
      EXPECT_LE(max_abs_diff(conv2d_same(x, f, bias), oracle::conv_same(x, f, bias)), 1e-12)
          << "s=" << s << " cout=" << cout;
    }
  }
}

TEST(Conv2dSame, OutputShapeStableForEveryOddSize) {
  Rng rng(4);
  const Tensor x = random_tensor({1, 2, 4, 3}, rng);
  for (std::size_t s = 1; s <= 11; s += 2) {
    EXPECT_EQ(conv2d_same(x, random_bank(5, 2, s, rng), std::vector<double>(5)).shape(),
              (Shape{1, 5, 4, 3}));
  }
}

TEST(Conv2dSame, LinearInInputAndFilters) {
  Rng rng(5);
  const Tensor x1 = random_tensor({2, 2, 6, 6}, rng), x2 = random_tensor({2, 2, 6, 6}, rng);
  const FilterBank f1 = random_bank(3, 2, 3, rng), f2 = random_bank(3, 2, 3, rng);
  const std::vector<double> zero(3, 0.0);
  const double a = 0.7, b = -1.3;
  Tensor mix({2, 2, 6, 6});
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x1[i] + b * x2[i];
  const Tensor lhs = conv2d_same(mix, f1, zero);
  const Tensor y1 = conv2d_same(x1, f1, zero), y2 = conv2d_same(x2, f1, zero);
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], a * y1[i] + b * y2[i], 1e-10);

  FilterBank fmix(3, 2, 3);
  for (std::size_t i = 0; i < fmix.weights().size(); ++i)
    fmix.weights()[i] = a * f1.weights()[i] + b * f2.weights()[i];
  const Tensor lhs2 = conv2d_same(x1, fmix, zero);
  const Tensor z2 = conv2d_same(x1, f2, zero);
  for (std::size_t i = 0; i < lhs2.size(); ++i) EXPECT_NEAR(lhs2[i], a * y1[i] + b * z2[i], 1e-10);
}

TEST(Conv2dSame, ShapeMismatchNamesBothShapes) {
  Rng rng(6);
  const Tensor x = random_tensor({1, 2, 4, 4}, rng);
  const FilterBank f = random_bank(1, 3, 3, rng);
  try {
    conv2d_same(x, f, std::vector<double>{0.0});
    FAIL() << "expected a shape error";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1,2,4,4]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[1,3,3,3]"), std::string::npos) << msg;
  }
}

TEST(Conv2dSame, DeterministicAcrossCalls) {
  Rng rng(7);
  const Tensor x = random_tensor({2, 3, 9, 8}, rng);
  const FilterBank f = random_bank(5, 3, 5, rng);
  const std::vector<double> bias(5, 0.1);
  EXPECT_EQ(conv2d_same(x, f, bias), conv2d_same(x, f, bias));
}

TEST(Conv2dSame, BackwardMatchesFiniteDifferences) {
  Rng rng(8);
  Tensor x = random_tensor({2, 2, 5, 6}, rng);
  FilterBank f = random_bank(3, 2, 5, rng);
  std::vector<double> bias{0.1, 0.2, -0.3};
  const Tensor probe = random_tensor({2, 3, 5, 6}, rng);
  auto loss = [&] { return oracle::weighted_sum(conv2d_same(x, f, bias), probe); };

  const Tensor gx = conv2d_same_grad_input(probe, f);
  const Tensor gw = conv2d_same_grad_weights(x, probe, 5);
  const std::vector<double> gb = conv_grad_bias(probe);
  const double h = 1e-5;
  for (int n = 0; n < 100; ++n) {
    const auto i = static_cast<std::size_t>(rng.below(x.size()));
    EXPECT_LE(oracle::rel_err(gx[i], oracle::central(x[i], loss, h)), 1e-5);
    const auto j = static_cast<std::size_t>(rng.below(gw.size()));
    EXPECT_LE(oracle::rel_err(gw[j], oracle::central(f.weights()[j], loss, h)), 1e-5);
  }
  for (std::size_t o = 0; o < bias.size(); ++o) {
    EXPECT_LE(oracle::rel_err(gb[o], oracle::central(bias[o], loss, h)), 1e-5);
  }
}

TEST(AvgPool, ConstantInputStaysConstant) {
  const Tensor y = avg_pool(Tensor({2, 3, 9, 7}, 2.5), 3, 3);
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(AvgPool, OutputExtent) {
  EXPECT_EQ(avg_pool(Tensor({1, 1, 64, 64}), 3, 3).shape(), (Shape{1, 1, 21, 21}));
  EXPECT_EQ(avg_pool(Tensor({1, 1, 64, 48}), 3, 3).shape(), (Shape{1, 1, 21, 16}));
}

TEST(AvgPool, MatchesNestedLoopOracle) {
  Rng rng(9);
  const Tensor x = random_tensor({2, 3, 11, 10}, rng);
  EXPECT_LE(max_abs_diff(avg_pool(x, 3, 3), oracle::avg_pool(x, 3, 3)), 1e-12);
  EXPECT_LE(max_abs_diff(avg_pool(x, 3, 2), oracle::avg_pool(x, 3, 2)), 1e-12);
}

TEST(AvgPool, WindowLargerThanInputRejected) {
  EXPECT_THROW(avg_pool(Tensor({1, 1, 2, 5}), 3, 3), std::invalid_argument);
}

TEST(AvgPool, BackwardMatchesFiniteDifferences) {
  Rng rng(10);
  Tensor x = random_tensor({1, 2, 10, 8}, rng);
  const Tensor probe = random_tensor({1, 2, 3, 2}, rng);
  const Tensor g = avg_pool_backward(probe, x.shape(), 3, 3);
  auto loss = [&] { return oracle::weighted_sum(avg_pool(x, 3, 3), probe); };
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(g[i], oracle::central(x[i], loss, 1e-5), 1e-9);
  }
}

TEST(Relu, Definition) {
  const Tensor y = relu(Tensor({3}, std::vector<double>{-1.0, 0.0, 2.0}));
  EXPECT_EQ(y.values()[0], 0.0);
  EXPECT_EQ(y.values()[1], 0.0);
  EXPECT_EQ(y.values()[2], 2.0);
}

TEST(Relu, AllNegativeIsDead) {
  const Tensor x({2, 3}, -0.5);
  const Tensor y = relu(x);
  const Tensor g = relu_backward(Tensor({2, 3}, 1.0), x);
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_EQ(y[i], 0.0);
    EXPECT_EQ(g[i], 0.0);
  }
}

TEST(Relu, BackwardMatchesFiniteDifferences) {
  Rng rng(11);
  Tensor x = random_tensor({50}, rng);
  const Tensor probe = random_tensor({50}, rng);
  const Tensor g = relu_backward(probe, x);
  auto loss = [&] { return oracle::weighted_sum(relu(x), probe); };
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::fabs(x[i]) <= 1e-3) continue;
    EXPECT_LE(oracle::rel_err(g[i], oracle::central(x[i], loss, 1e-6)), 1e-6);
  }
}

TEST(Linear, IdentityAndBias) {
  Rng rng(12);
  const Tensor x = random_tensor({3, 4}, rng);
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  EXPECT_EQ(linear(x, eye, std::vector<double>(4, 0.0)), x);

  const std::vector<double> b{1.0, -2.0};
  const Tensor y = linear(x, Tensor({2, 4}), b);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(y.at(r, 0), 1.0);
    EXPECT_EQ(y.at(r, 1), -2.0);
  }
}

TEST(Linear, ShapeMismatchRejected) {
  EXPECT_THROW(linear(Tensor({2, 3}), Tensor({4, 5}), std::vector<double>(4)),
               std::invalid_argument);
  EXPECT_THROW(linear(Tensor({2, 3}), Tensor({4, 3}), std::vector<double>(2)),
               std::invalid_argument);
}

TEST(Linear, BackwardMatchesFiniteDifferences) {
  Rng rng(13);
  Tensor x = random_tensor({3, 5}, rng);
  Tensor w = random_tensor({4, 5}, rng);
  std::vector<double> b{0.1, 0.2, 0.3, 0.4};
  const Tensor probe = random_tensor({3, 4}, rng);
  const LinearGrads g = linear_backward(probe, x, w);
  auto loss = [&] { return oracle::weighted_sum(linear(x, w, b), probe); };
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_LE(oracle::rel_err(g.input[i], oracle::central(x[i], loss, 1e-6)), 1e-6);
  for (std::size_t i = 0; i < w.size(); ++i)
    EXPECT_LE(oracle::rel_err(g.weights[i], oracle::central(w[i], loss, 1e-6)), 1e-6);
  for (std::size_t i = 0; i < b.size(); ++i)
    EXPECT_LE(oracle::rel_err(g.bias[i], oracle::central(b[i], loss, 1e-6)), 1e-6);
}
