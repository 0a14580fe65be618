#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"

using namespace cbmir;
using namespace testing_support;

namespace {

// Nested-loop cross-correlation with explicit zero padding.
Tensor naive_conv(const Tensor& x, const LayerParams& p, const Conv& c) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t OH = (H + 2 * c.padding - c.kernel_h) / c.stride + 1;
  const std::size_t OW = (W + 2 * c.padding - c.kernel_w) / c.stride + 1;
  Tensor out({c.out_channels, OH, OW});
  for (std::size_t o = 0; o < c.out_channels; ++o)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        double s = p.biases[o];
        for (std::size_t ci = 0; ci < C; ++ci)
          for (std::size_t ky = 0; ky < c.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < c.kernel_w; ++kx) {
              const long iy = static_cast<long>(oy * c.stride + ky) - static_cast<long>(c.padding);
              const long ix = static_cast<long>(ox * c.stride + kx) - static_cast<long>(c.padding);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
              s += p.weights[((o * C + ci) * c.kernel_h + ky) * c.kernel_w + kx] *
                   x.at(ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
        out.at(o, oy, ox) = s;
      }
  return out;
}

LayerParams random_params(const LayerKind& kind, const Shape& in, Rng& rng) {
  LayerParams p = make_params(kind, in);
  for (auto& v : p.weights.values()) v = rng.uniform(-1, 1);
  for (auto& v : p.biases.values()) v = rng.uniform(-1, 1);
  return p;
}

// Checks d(sum R * layer(x)) against central differences for every input
// element and every parameter.
void gradient_check_conv(const Shape& in, const Conv& c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x = random_tensor(in, rng);
  LayerParams p = random_params(c, in, rng);
  const Tensor R = random_tensor(output_shape(c, in), rng);
  p.zero_grads();
  const Tensor gx = conv_backward(x, R, p, c);
  auto loss = [&] { return dot(conv_forward(x, p, c), R); };
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_LT(rel_error(gx[i], central_difference(loss, x[i])), 1e-4) << "input " << i;
  for (std::size_t i = 0; i < p.weights.size(); ++i)
    EXPECT_LT(rel_error(p.weight_grads[i], central_difference(loss, p.weights[i])), 1e-4) << "weight " << i;
  for (std::size_t i = 0; i < p.biases.size(); ++i)
    EXPECT_LT(rel_error(p.bias_grads[i], central_difference(loss, p.biases[i])), 1e-4) << "bias " << i;
}

}  // namespace

TEST(TensorTest, SizeMatchesShape) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ConfigError);
  EXPECT_TRUE(Tensor().empty());
}

TEST(TensorTest, AllFiniteDetectsNan) {
  Tensor t({3});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

// ---- conv

TEST(ConvTest, OutputShapeFirstLayer) {
  EXPECT_EQ(output_shape(Conv{64, 11, 11, 4, 2}, {1, 224, 224}), (Shape{64, 55, 55}));
}

TEST(ConvTest, MatchesNestedLoopOracleOnToyInput) {
  Rng rng(11);
  const Conv c{2, 3, 3, 2, 1};
  const Tensor x = random_tensor({1, 6, 6}, rng);
  const LayerParams p = random_params(c, {1, 6, 6}, rng);
  const Tensor got = conv_forward(x, p, c);
  const Tensor want = naive_conv(x, p, c);
  ASSERT_EQ(got.shape(), want.shape());
  EXPECT_EQ(got.shape(), (Shape{2, 3, 3}));
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(ConvTest, OracleAcrossStridesAndPaddings) {
  Rng rng(12);
  for (std::size_t s = 1; s <= 3; ++s)
    for (std::size_t pad = 0; pad <= 2; ++pad) {
      const Conv c{3, 3, 2, s, pad};
      const Shape in{2, 7, 8};
      const Tensor x = random_tensor(in, rng);
      const LayerParams p = random_params(c, in, rng);
      const Tensor got = conv_forward(x, p, c), want = naive_conv(x, p, c);
      ASSERT_EQ(got.shape(), want.shape());
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
}

TEST(ConvTest, ZeroKernelGivesZero) {
  const Conv c{1, 3, 3, 1, 0};
  LayerParams p = make_params(c, {1, 3, 3});
  Tensor x({1, 3, 3}, 5.0);
  const Tensor y = conv_forward(x, p, c);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(y[0], 0.0);
}

TEST(ConvTest, CornerKernelPicksFirstElement) {
  const Conv c{1, 2, 2, 1, 0};
  LayerParams p = make_params(c, {1, 2, 2});
  p.weights[0] = 1.0;
  const Tensor x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor y = conv_forward(x, p, c);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y[0], 1.0);
}

TEST(ConvTest, ChannelMismatchIsConfigError) {
  const Conv c{1, 2, 2, 1, 0};
  LayerParams p = make_params(c, {2, 4, 4});
  EXPECT_THROW(conv_forward(Tensor({1, 4, 4}), p, c), ConfigError);
  EXPECT_THROW(output_shape(Conv{1, 5, 5, 1, 0}, {1, 3, 3}), ConfigError);
}

TEST(ConvTest, ZeroUpstreamGivesZeroGradients) {
  Rng rng(3);
  const Conv c{2, 2, 2, 1, 1};
  const Tensor x = random_tensor({1, 3, 3}, rng);
  LayerParams p = random_params(c, {1, 3, 3}, rng);
  p.zero_grads();
  const Tensor gx = conv_backward(x, Tensor(output_shape(c, x.shape())), p, c);
  EXPECT_EQ(gx.shape(), x.shape());
  for (double v : gx.values()) EXPECT_EQ(v, 0.0);
  for (double v : p.weight_grads.values()) EXPECT_EQ(v, 0.0);
  for (double v : p.bias_grads.values()) EXPECT_EQ(v, 0.0);
}

TEST(ConvTest, GradientMatchesFiniteDifferenceSmall) { gradient_check_conv({1, 3, 3}, Conv{1, 2, 2, 1, 0}, 5); }

TEST(ConvTest, GradientMatchesFiniteDifferenceStridedPadded) {
  gradient_check_conv({2, 7, 7}, Conv{3, 3, 3, 2, 1}, 6);
  gradient_check_conv({1, 11, 11}, Conv{2, 5, 5, 4, 2}, 7);
}

TEST(ConvTest, BiasGradientIsChannelSumOfUpstream) {
  Rng rng(8);
  const Conv c{3, 2, 2, 1, 0};
  const Tensor x = random_tensor({2, 4, 4}, rng);
  LayerParams p = random_params(c, x.shape(), rng);
  const Tensor R = random_tensor(output_shape(c, x.shape()), rng);
  p.zero_grads();
  conv_backward(x, R, p, c);
  const std::size_t plane = R.dim(1) * R.dim(2);
  for (std::size_t o = 0; o < 3; ++o) {
    double s = 0;
    for (std::size_t k = 0; k < plane; ++k) s += R[o * plane + k];
    EXPECT_NEAR(p.bias_grads[o], s, 1e-12);
  }
}

TEST(ConvTest, GradientsAccumulateAcrossCalls) {
  Rng rng(9);
  const Conv c{1, 2, 2, 1, 0};
  const Tensor x = random_tensor({1, 3, 3}, rng);
  LayerParams p = random_params(c, x.shape(), rng);
  const Tensor R = random_tensor(output_shape(c, x.shape()), rng);
  p.zero_grads();
  conv_backward(x, R, p, c);
  const Tensor once = p.weight_grads;
  conv_backward(x, R, p, c);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(p.weight_grads[i], 2 * once[i], 1e-12);
}

TEST(ConvTest, LinearInInput) {
  Rng rng(10);
  const Conv c{2, 3, 3, 1, 1};
  const Shape in{2, 5, 5};
  LayerParams p = random_params(c, in, rng);
  LayerParams nob = p;
  nob.biases.fill(0.0);
  const Tensor x = random_tensor(in, rng), y = random_tensor(in, rng);
  const double a = 0.7, b = -1.3;
  Tensor mix(in);
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
  const Tensor fm = conv_forward(mix, nob, c), fx = conv_forward(x, nob, c), fy = conv_forward(y, nob, c);
  for (std::size_t i = 0; i < fm.size(); ++i) EXPECT_NEAR(fm[i], a * fx[i] + b * fy[i], 1e-10);
}

// ---- max pooling

TEST(MaxPoolTest, OutputShapes) {
  EXPECT_EQ(output_shape(MaxPool{3, 2}, {64, 55, 55}), (Shape{64, 27, 27}));
  // 7x7 grid: windows start at 0, 2, 4 -> 3 per axis
  EXPECT_EQ(output_shape(MaxPool{3, 2}, {1, 7, 7}), (Shape{1, 3, 3}));
  EXPECT_THROW(output_shape(MaxPool{3, 2}, {1, 2, 2}), ConfigError);
}

TEST(MaxPoolTest, ConstantInputConstantOutput) {
  const Tensor x({2, 6, 6}, 3.5);
  const Tensor y = maxpool_forward(x, MaxPool{3, 2});
  for (double v : y.values()) EXPECT_EQ(v, 3.5);
}

TEST(MaxPoolTest, SingleMaximumSharedByAllWindows) {
  Tensor x({1, 4, 4}, 0.0);
  x.at(0, 1, 1) = 9.0;
  MaxPoolMask mask;
  const Tensor y = maxpool_forward(x, MaxPool{3, 1}, &mask);
  ASSERT_EQ(y.size(), 4u);
  for (double v : y.values()) EXPECT_EQ(v, 9.0);
  for (auto a : mask.argmax) EXPECT_EQ(a, 5u);
}

TEST(MaxPoolTest, MatchesBruteForceWindowMax) {
  Rng rng(20);
  const Tensor x = random_tensor({2, 9, 9}, rng);
  const Tensor y = maxpool_forward(x, MaxPool{3, 2});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t oy = 0; oy < 4; ++oy)
      for (std::size_t ox = 0; ox < 4; ++ox) {
        double m = -1e300;
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = 0; b < 3; ++b) m = std::max(m, x.at(c, oy * 2 + a, ox * 2 + b));
        EXPECT_EQ(y.at(c, oy, ox), m);
      }
}

TEST(MaxPoolTest, TiesGoToFirstRowMajorIndex) {
  Tensor x({1, 3, 3}, 1.0);
  MaxPoolMask mask;
  maxpool_forward(x, MaxPool{3, 1}, &mask);
  EXPECT_EQ(mask.argmax[0], 0u);
}

TEST(MaxPoolTest, ZeroUpstreamGivesZero) {
  Rng rng(21);
  MaxPoolMask mask;
  const Tensor y = maxpool_forward(random_tensor({1, 5, 5}, rng), MaxPool{3, 2}, &mask);
  const Tensor g = maxpool_backward(Tensor(y.shape()), mask);
  EXPECT_EQ(g.shape(), (Shape{1, 5, 5}));
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(MaxPoolTest, GradientMatchesFiniteDifference) {
  // distinct values, spaced well beyond the step so no tie is crossed
  Tensor x({1, 5, 5});
  std::vector<double> vals(25);
  std::iota(vals.begin(), vals.end(), 0.0);
  Rng rng(22);
  rng.shuffle(vals.begin(), vals.end());
  for (std::size_t i = 0; i < 25; ++i) x[i] = vals[i] * 0.1;
  const MaxPool spec{3, 2};
  MaxPoolMask mask;
  const Tensor y = maxpool_forward(x, spec, &mask);
  const Tensor R = random_tensor(y.shape(), rng);
  const Tensor g = maxpool_backward(R, mask);
  auto loss = [&] { return dot(maxpool_forward(x, spec), R); };
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double fd = central_difference(loss, x[i]);
    if (g[i] == 0.0) {
      EXPECT_NEAR(fd, 0.0, 1e-9);
    } else {
      EXPECT_LT(rel_error(g[i], fd), 1e-4);
    }
  }
}

TEST(MaxPoolTest, OverlappingWindowsAccumulate) {
  // row [1, 5, 2, 0] over two lower rows that never win; both 3x3 windows
  // (stride 1) pick the 5
  Tensor x({1, 3, 4}, -10.0);
  const double row[] = {1, 5, 2, 0};
  for (std::size_t c = 0; c < 4; ++c) x.at(0, 0, c) = row[c];
  MaxPoolMask mask;
  const Tensor y = maxpool_forward(x, MaxPool{3, 1}, &mask);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2}));
  EXPECT_EQ(y[0], 5.0);
  EXPECT_EQ(y[1], 5.0);
  const Tensor g = maxpool_backward(Tensor({1, 1, 2}, std::vector<double>{0.25, 0.5}), mask);
  EXPECT_DOUBLE_EQ(g.at(0, 0, 1), 0.75);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (i != 1) {
      EXPECT_EQ(g[i], 0.0);
    }
}

TEST(MaxPoolTest, BackwardConservesMass) {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    MaxPoolMask mask;
    const Tensor y = maxpool_forward(random_tensor({3, 11, 11}, rng), MaxPool{3, 2}, &mask);
    const Tensor up = random_tensor(y.shape(), rng);
    const Tensor g = maxpool_backward(up, mask);
    double s_up = 0, s_g = 0;
    for (double v : up.values()) s_up += v;
    for (double v : g.values()) s_g += v;
    EXPECT_NEAR(s_up, s_g, 1e-12);
  }
}

TEST(MaxPoolTest, MaskMismatchIsInternalError) {
  MaxPoolMask mask;
  maxpool_forward(Tensor({1, 5, 5}), MaxPool{3, 2}, &mask);
  EXPECT_THROW(maxpool_backward(Tensor({1, 3, 3}), mask), InternalError);
}

// ---- relu

TEST(ReluTest, Forward) {
  const Tensor y = relu_forward(Tensor::vector({-1, 0, 2}));
  EXPECT_EQ(y.storage(), (std::vector<double>{0, 0, 2}));
}

TEST(ReluTest, Backward) {
  const Tensor g = relu_backward(Tensor::vector({-1, 2}), Tensor::vector({5, 5}));
  EXPECT_EQ(g.storage(), (std::vector<double>{0, 5}));
}

TEST(ReluTest, GradientAwayFromKink) {
  Rng rng(30);
  Tensor x({40});
  for (auto& v : x.values()) {
    do v = rng.uniform(-1, 1);
    while (std::abs(v) <= 1e-2);
  }
  const Tensor R = random_tensor(x.shape(), rng);
  const Tensor g = relu_backward(x, R);
  auto loss = [&] { return dot(relu_forward(x), R); };
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double fd = central_difference(loss, x[i]);
    if (g[i] == 0.0) {
      EXPECT_NEAR(fd, 0.0, 1e-12);
    } else {
      EXPECT_LT(rel_error(g[i], fd), 1e-4);
    }
  }
}

// ---- fully connected

TEST(FcTest, IdentityWeights) {
  const FullyConnected f{3};
  LayerParams p = make_params(f, {3});
  for (std::size_t i = 0; i < 3; ++i) p.weights[i * 3 + i] = 1.0;
  const Tensor x = Tensor::vector({0.5, -2, 7});
  EXPECT_EQ(fc_forward(x, p, f).storage(), x.storage());
}

TEST(FcTest, MatrixVectorProduct) {
  const FullyConnected f{2};
  LayerParams p = make_params(f, {2});
  p.weights = Tensor({2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor y = fc_forward(Tensor::vector({1, 1}), p, f);
  EXPECT_EQ(y.storage(), (std::vector<double>{3, 7}));
}

TEST(FcTest, DimensionMismatchIsConfigError) {
  const FullyConnected f{2};
  LayerParams p = make_params(f, {3});
  EXPECT_THROW(fc_forward(Tensor({4}), p, f), ConfigError);
}

TEST(FcTest, GradientMatchesFiniteDifference) {
  Rng rng(40);
  const FullyConnected f{2};
  Tensor x = random_tensor({3}, rng);
  LayerParams p = random_params(f, {3}, rng);
  const Tensor R = random_tensor({2}, rng);
  p.zero_grads();
  const Tensor gx = fc_backward(x, R, p, f);
  auto loss = [&] { return dot(fc_forward(x, p, f), R); };
  for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(rel_error(gx[i], central_difference(loss, x[i])), 1e-4);
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_LT(rel_error(p.weight_grads[i], central_difference(loss, p.weights[i])), 1e-4);
  for (std::size_t i = 0; i < 2; ++i)
    EXPECT_LT(rel_error(p.bias_grads[i], central_difference(loss, p.biases[i])), 1e-4);
}

TEST(FcTest, FlattensSpatialInput) {
  Rng rng(41);
  const FullyConnected f{4};
  const Shape in{2, 3, 3};
  Tensor x = random_tensor(in, rng);
  LayerParams p = random_params(f, in, rng);
  const Tensor R = random_tensor({4}, rng);
  p.zero_grads();
  const Tensor gx = fc_backward(x, R, p, f);
  EXPECT_EQ(gx.shape(), in);
  auto loss = [&] { return dot(fc_forward(x, p, f), R); };
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LT(rel_error(gx[i], central_difference(loss, x[i])), 1e-4);
}

TEST(FcTest, LinearInInputAndZeroUpstream) {
  Rng rng(42);
  const FullyConnected f{5};
  LayerParams p = random_params(f, {7}, rng);
  p.biases.fill(0.0);
  const Tensor x = random_tensor({7}, rng), y = random_tensor({7}, rng);
  Tensor mix({7});
  for (std::size_t i = 0; i < 7; ++i) mix[i] = 2.5 * x[i] - 0.5 * y[i];
  const Tensor fm = fc_forward(mix, p, f), fx = fc_forward(x, p, f), fy = fc_forward(y, p, f);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(fm[i], 2.5 * fx[i] - 0.5 * fy[i], 1e-10);
  p.zero_grads();
  const Tensor g = fc_backward(x, Tensor({5}), p, f);
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
  for (double v : p.weight_grads.values()) EXPECT_EQ(v, 0.0);
}

// ---- dropout

TEST(DropoutTest, KeepOneIsIdentityInBothModes) {
  Rng rng(50);
  const Tensor x = random_tensor({10}, rng);
  EXPECT_EQ(dropout_forward(x, 1.0, Mode::train, rng).storage(), x.storage());
  EXPECT_EQ(dropout_forward(x, 1.0, Mode::eval, rng).storage(), x.storage());
}

TEST(DropoutTest, EvalScalesByKeepProb) {
  Rng rng(51);
  const Tensor y = dropout_forward(Tensor::vector({2, 4}), 0.5, Mode::eval, rng);
  EXPECT_EQ(y.storage(), (std::vector<double>{1, 2}));
}

TEST(DropoutTest, TrainDoesNotScaleSurvivors) {
  Rng rng(52);
  const Tensor x({1000}, 3.0);
  DropoutMask mask;
  const Tensor y = dropout_forward(x, 0.5, Mode::train, rng, &mask);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], mask[i] ? 3.0 : 0.0);
}

TEST(DropoutTest, TrainMeanMatchesKeepProb) {
  Rng rng(53);
  const std::size_t n = 8, trials = 100000;
  const Tensor ones({n}, 1.0);
  std::vector<double> sum(n, 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    const Tensor y = dropout_forward(ones, 0.5, Mode::train, rng);
    for (std::size_t i = 0; i < n; ++i) sum[i] += y[i];
  }
  for (double s : sum) {
    EXPECT_GE(s / trials, 0.49);
    EXPECT_LE(s / trials, 0.51);
  }
}

TEST(DropoutTest, BackwardFollowsMask) {
  Rng rng(54);
  DropoutMask mask;
  dropout_forward(Tensor({50}, 1.0), 0.5, Mode::train, rng, &mask);
  const Tensor g = dropout_backward(Tensor({50}, 2.0), mask, 0.5, Mode::train);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(g[i], mask[i] ? 2.0 : 0.0);
  const Tensor ge = dropout_backward(Tensor({3}, 2.0), {}, 0.25, Mode::eval);
  for (double v : ge.values()) EXPECT_EQ(v, 0.5);
}

TEST(DropoutTest, InvalidKeepProb) {
  Rng rng(55);
  EXPECT_THROW(dropout_forward(Tensor({2}), 0.0, Mode::train, rng), ConfigError);
  EXPECT_THROW(dropout_forward(Tensor({2}), 1.5, Mode::eval, rng), ConfigError);
}

// ---- log-softmax

TEST(LogSoftmaxTest, UniformOver24) {
  const Tensor y = logsoftmax_forward(Tensor({24}, 0.37));
  for (double v : y.values()) EXPECT_NEAR(v, std::log(1.0 / 24), 1e-12);
  EXPECT_NEAR(y[0], -3.17805, 1e-5);
}

TEST(LogSoftmaxTest, LargeInputNoOverflow) {
  const Tensor y = logsoftmax_forward(Tensor::vector({0, 1000}));
  ASSERT_TRUE(y.all_finite());
  // log(1 + e^-1000) underflows to 0 in double; exact values -1000 and -e^-1000
  EXPECT_DOUBLE_EQ(y[0], -1000.0);
  EXPECT_DOUBLE_EQ(y[1], 0.0);
  const Tensor z = logsoftmax_forward(Tensor::vector({0, 3}));
  EXPECT_NEAR(z[0], -3.048587351573742, 1e-14);  // -log(1 + e^3)
  EXPECT_NEAR(z[1], -0.04858735157374206, 1e-14);
}

TEST(LogSoftmaxTest, ProbabilityVectorAndShiftInvariance) {
  Rng rng(60);
  for (int t = 0; t < 100; ++t) {
    const Tensor x = random_tensor({10}, rng, -20, 20);
    const Tensor y = logsoftmax_forward(x);
    double s = 0;
    for (double v : y.values()) {
      EXPECT_LE(v, 0.0);
      s += std::exp(v);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
    Tensor shifted = x;
    for (double& v : shifted.values()) v += 123.4;
    const Tensor ys = logsoftmax_forward(shifted);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(ys[i], y[i], 1e-9);
  }
}

TEST(LogSoftmaxTest, GradientMatchesFiniteDifference) {
  Rng rng(61);
  Tensor x = random_tensor({6}, rng, -3, 3);
  const Tensor R = random_tensor({6}, rng);
  const Tensor g = logsoftmax_backward(logsoftmax_forward(x), R);
  auto loss = [&] { return dot(logsoftmax_forward(x), R); };
  for (std::size_t i = 0; i < 6; ++i) EXPECT_LT(rel_error(g[i], central_difference(loss, x[i])), 1e-4);
}

// ---- shape algebra

TEST(ShapeAlgebraTest, BackwardShapeEqualsForwardInput) {
  Rng rng(70);
  const Shape in{2, 9, 9};
  const Tensor x = random_tensor(in, rng);
  {
    const Conv c{3, 3, 3, 2, 1};
    LayerParams p = random_params(c, in, rng);
    const Tensor y = conv_forward(x, p, c);
    EXPECT_EQ(conv_backward(x, y, p, c).shape(), in);
  }
  {
    MaxPoolMask m;
    const Tensor y = maxpool_forward(x, MaxPool{3, 2}, &m);
    EXPECT_EQ(maxpool_backward(y, m).shape(), in);
  }
  EXPECT_EQ(relu_backward(x, x).shape(), in);
  {
    const FullyConnected f{4};
    LayerParams p = random_params(f, in, rng);
    const Tensor y = fc_forward(x, p, f);
    EXPECT_EQ(fc_backward(x, y, p, f).shape(), in);
  }
}
