#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nres/autodiff/grad_check.hpp"
#include "nres/autodiff/ops.hpp"
#include "nres/error.hpp"
#include "test_util.hpp"

using namespace nres;
using namespace nres::ad;
using nres::testing::random_away_from_zero;
using nres::testing::random_tensor;

namespace {

// Direct six-fold loop, independent of the im2col/GEMM path.
std::vector<double> brute_force_conv(const Tensor& x, const Tensor& k, const Tensor& b, Triple st, Triple pd) {
  const auto& xs = x.shape();
  const auto& ks = k.shape();
  const std::size_t B = xs[0], Ci = xs[1], D = xs[2], H = xs[3], W = xs[4];
  const std::size_t Co = ks[0], kd = ks[2], kh = ks[3], kw = ks[4];
  const std::size_t od = (D + 2 * pd[0] - kd) / st[0] + 1;
  const std::size_t oh = (H + 2 * pd[1] - kh) / st[1] + 1;
  const std::size_t ow = (W + 2 * pd[2] - kw) / st[2] + 1;
  std::vector<double> out;
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t z = 0; z < od; ++z)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx) {
            double acc = b.defined() ? b.at(co) : 0.0;
            for (std::size_t ci = 0; ci < Ci; ++ci)
              for (std::size_t a = 0; a < kd; ++a)
                for (std::size_t c = 0; c < kh; ++c)
                  for (std::size_t e = 0; e < kw; ++e) {
                    const long iz = long(z * st[0] + a) - long(pd[0]);
                    const long iy = long(y * st[1] + c) - long(pd[1]);
                    const long ix = long(xx * st[2] + e) - long(pd[2]);
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= long(D) || iy >= long(H) || ix >= long(W)) continue;
                    acc += x.at((((n * Ci + ci) * D + iz) * H + iy) * W + ix) *
                           k.at((((co * Ci + ci) * kd + a) * kh + c) * kw + e);
                  }
            out.push_back(acc);
          }
  return out;
}

Tensor iota(Shape shape) {
  std::vector<double> v(numel(shape));
  std::iota(v.begin(), v.end(), 0.0);
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

TEST(Conv3d, IdentityKernelReproducesInput) {
  Tensor x = Tensor::full({1, 1, 4, 4, 4}, 1.0);
  Tensor k = Tensor::full({1, 1, 1, 1, 1}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv3d(x, k, b, {1, 1, 1}, {0, 0, 0});
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Conv3d, FullWindowSumsAllElements) {
  Tensor x = iota({1, 1, 2, 2, 2});
  Tensor k = Tensor::full({1, 1, 2, 2, 2}, 1.0);
  Tensor y = conv3d(x, k, Tensor::zeros({1}), {1, 1, 1}, {0, 0, 0});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1, 1}));
  const auto expected = brute_force_conv(x, k, Tensor::zeros({1}), {1, 1, 1}, {0, 0, 0});
  EXPECT_DOUBLE_EQ(expected[0], 28.0);
  EXPECT_DOUBLE_EQ(y.item(), 28.0);
}

TEST(Conv3d, StrideTwoHalvesExtents) {
  Tensor x = random_tensor({1, 2, 6, 6, 6}, 3);
  Tensor k = random_tensor({4, 2, 3, 3, 3}, 4);
  Tensor y = conv3d(x, k, Tensor::zeros({4}), {2, 2, 2}, {1, 1, 1});
  EXPECT_EQ(y.shape(), (Shape{1, 4, 3, 3, 3}));
}

TEST(Conv3d, ChannelMismatchNamesAxis) {
  try {
    conv3d(random_tensor({1, 3, 4, 4, 4}, 1), random_tensor({2, 2, 3, 3, 3}, 2), Tensor(), {1, 1, 1}, {1, 1, 1});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
  }
  try {
    conv3d(random_tensor({1, 1, 1, 4, 4}, 1), random_tensor({1, 1, 3, 3, 3}, 2), Tensor(), {1, 1, 1}, {0, 1, 1});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("depth"), std::string::npos);
  }
}

TEST(Conv3d, MatchesBruteForceWithStrideAndPadding) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor x = random_tensor({2, 3, 5, 6, 4}, seed);
    Tensor k = random_tensor({4, 3, 3, 1, 3}, seed + 100);
    Tensor b = random_tensor({4}, seed + 200);
    const Triple st{2, 1, 2}, pd{1, 0, 1};
    Tensor y = conv3d(x, k, b, st, pd);
    const auto ref = brute_force_conv(x, k, b, st, pd);
    ASSERT_EQ(y.numel(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.at(i), ref[i], 1e-12);
  }
}

TEST(Conv3d, LinearInInput) {
  Tensor x = random_tensor({1, 2, 4, 4, 4}, 11);
  Tensor z = random_tensor({1, 2, 4, 4, 4}, 12);
  Tensor k = random_tensor({3, 2, 3, 3, 3}, 13);
  const double a = 1.7, b = -0.4;
  Tensor lhs = conv3d(add(scale(x, a), scale(z, b)), k, Tensor(), {1, 1, 1}, {1, 1, 1});
  Tensor rhs = add(scale(conv3d(x, k, Tensor(), {1, 1, 1}, {1, 1, 1}), a), scale(conv3d(z, k, Tensor(), {1, 1, 1}, {1, 1, 1}), b));
  for (std::size_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs.at(i), rhs.at(i), 1e-10);
}

TEST(VoxelShuffle, FactorOneIsIdentity) {
  Tensor x = random_tensor({1, 3, 2, 3, 4}, 5);
  Tensor y = voxel_shuffle(x, 1);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(VoxelShuffle, EightChannelsBecomeOneBlock) {
  Tensor y = voxel_shuffle(iota({1, 8, 1, 1, 1}), 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2, 2}));
  // Channel (dz*2 + dy)*2 + dx sits at spatial offset (dz, dy, dx): with a
  // single output block that is exactly row-major order.
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(y.at(i), static_cast<double>(i));
}

TEST(VoxelShuffle, IsABijection) {
  Tensor x = random_tensor({2, 16, 2, 3, 2}, 8);
  Tensor y = voxel_shuffle(x, 2);
  EXPECT_EQ(y.shape(), (Shape{2, 2, 4, 6, 4}));
  std::vector<double> a(x.data().begin(), x.data().end()), b(y.data().begin(), y.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_NEAR(sum(x).item(), sum(y).item(), 1e-12);
}

TEST(VoxelShuffle, RejectsIndivisibleChannels) { EXPECT_THROW(voxel_shuffle(iota({1, 6, 1, 1, 1}), 2), ShapeError); }

TEST(BatchNorm, TrainModeStandardizes) {
  Tensor x = random_tensor({2, 3, 4, 4, 2}, 21, 5.0);
  auto state = BatchNormState::identity(3);
  Tensor y = batch_norm(x, Tensor::full({3}, 1.0), Tensor::zeros({3}), state, Mode::train);
  const std::size_t S = 32;
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t s = 0; s < S; ++s) m += y.at((b * 3 + c) * S + s);
    m /= 64;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t s = 0; s < S; ++s) v += std::pow(y.at((b * 3 + c) * S + s) - m, 2);
    v /= 64;
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-6);
  }
}

TEST(BatchNorm, AffineParametersShiftAndScale) {
  Tensor x = random_tensor({1, 1, 8, 8, 8}, 31, 3.0);
  auto state = BatchNormState::identity(1);
  Tensor y = batch_norm(x, Tensor::full({1}, 2.0), Tensor::full({1}, 3.0), state, Mode::train);
  const double m = mean(y).item();
  double v = 0;
  for (double e : y.data()) v += (e - m) * (e - m);
  v /= static_cast<double>(y.numel());
  EXPECT_NEAR(m, 3.0, 1e-9);
  EXPECT_NEAR(std::sqrt(v), 2.0, 1e-4);
}

TEST(BatchNorm, EvalModeIsPureAndRequiresInitializedState) {
  Tensor x = random_tensor({1, 2, 3, 3, 3}, 41);
  auto state = BatchNormState::identity(2);
  batch_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), state, Mode::train);
  const auto before = state;
  Tensor a = batch_norm(x, Tensor::full({2}, 1.5), Tensor::zeros({2}), state, Mode::eval);
  Tensor b = batch_norm(x, Tensor::full({2}, 1.5), Tensor::zeros({2}), state, Mode::eval);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
  EXPECT_EQ(state.running_mean, before.running_mean);
  EXPECT_EQ(state.running_var, before.running_var);

  BatchNormState fresh;
  EXPECT_THROW(batch_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), fresh, Mode::eval), ContractError);
}

TEST(BatchNorm, TrainModeUpdatesRunningStatistics) {
  Tensor x = Tensor::from({2, 1, 2}, {1.0, 3.0, 5.0, 7.0});
  auto state = BatchNormState::identity(1);
  batch_norm(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), state, Mode::train);
  // mean 4, unbiased variance 20/3, momentum 0.1
  EXPECT_NEAR(state.running_mean[0], 0.4, 1e-15);
  EXPECT_NEAR(state.running_var[0], 0.9 + 0.1 * 20.0 / 3.0, 1e-15);
}

TEST(LeakyRelu, Definition) {
  Tensor y = leaky_relu(Tensor::from({3}, {-1.0, 0.0, 2.0}), 0.1);
  EXPECT_DOUBLE_EQ(y.at(0), -0.1);
  EXPECT_DOUBLE_EQ(y.at(1), 0.0);
  EXPECT_DOUBLE_EQ(y.at(2), 2.0);

  Tensor x = Tensor::from({4}, {0.0, 0.5, 3.0, 7.0});
  Tensor id = leaky_relu(x, 0.3);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(id.at(i), x.at(i));
}

TEST(LeakyRelu, NegativeSideGradientIsSlope) {
  Tensor x = Tensor::from({1}, {-3.0}, true);
  sum(leaky_relu(x, 0.2)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.2);
}

TEST(TrilinearUpsample, ConstantsStayConstant) {
  Tensor x = Tensor::full({1, 2, 2, 3, 1}, 7.0);
  Tensor y = trilinear_upsample(x, {3, 2, 5});
  EXPECT_EQ(y.shape(), (Shape{1, 2, 6, 6, 5}));
  for (double v : y.data()) EXPECT_NEAR(v, 7.0, 1e-14);
}

TEST(TrilinearUpsample, FactorFourShape) {
  Tensor y = trilinear_upsample(random_tensor({1, 4, 4, 4, 4}, 2), {4, 4, 4});
  EXPECT_EQ(y.shape(), (Shape{1, 4, 16, 16, 16}));
}

TEST(TrilinearUpsample, MonotoneAlongRamp) {
  Tensor x = Tensor::from({1, 1, 1, 1, 2}, {0.0, 1.0});
  Tensor y = trilinear_upsample(x, {1, 1, 2});
  ASSERT_EQ(y.numel(), 4u);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_GE(y.at(i), y.at(i - 1));
  EXPECT_DOUBLE_EQ(y.at(0), 0.0);
  EXPECT_DOUBLE_EQ(y.at(3), 1.0);
}

TEST(Pointwise, MseOfSelfIsZero) {
  Tensor x = random_tensor({3, 4}, 9);
  EXPECT_EQ(mse(x, x).item(), 0.0);
}

TEST(Pointwise, ExpInvertsLog1p) {
  Tensor q = Tensor::from({5}, {0.0, 1e-8, 0.3, 12.0, 1e4});
  Tensor back = add_scalar(ad::exp(ad::log1p(q)), -1.0);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(back.at(i), q.at(i), 1e-12 * std::max(1.0, q.at(i)));
}

TEST(Pointwise, MeanOfSmallVector) { EXPECT_DOUBLE_EQ(mean(Tensor::from({4}, {1, 2, 3, 6})).item(), 3.0); }

TEST(Pointwise, Log1pDomainError) { EXPECT_THROW(ad::log1p(Tensor::from({2}, {0.5, -1.0})), ValidationError); }

TEST(Pointwise, BroadcastTrailingSingletons) {
  Tensor a = random_tensor({2, 3, 2, 2, 2}, 1);
  Tensor w = Tensor::from({1, 3}, {1.0, 10.0, 100.0});
  Tensor y = mul(a, w);
  ASSERT_EQ(y.shape(), a.shape());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t s = 0; s < 8; ++s) {
        const std::size_t i = (b * 3 + c) * 8 + s;
        EXPECT_DOUBLE_EQ(y.at(i), a.at(i) * w.at(c));
      }
  EXPECT_THROW(add(random_tensor({2, 3}, 1), random_tensor({2, 4}, 2)), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = random_tensor({2, 3, 4}, 4, 1.0, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, ScalarWeightLeastSquares) {
  Tensor x = random_tensor({10}, 5);
  Tensor y = random_tensor({10}, 6);
  Tensor w = Tensor::from({1}, {0.7}, true);
  mse(mul(x, w), y).backward();
  double expected = 0;
  for (std::size_t i = 0; i < 10; ++i) expected += x.at(i) * (0.7 * x.at(i) - y.at(i));
  expected *= 2.0 / 10.0;
  EXPECT_NEAR(w.grad()[0], expected, 1e-14);
}

TEST(Backward, GradientsAccumulateAcrossPasses) {
  Tensor x = random_tensor({6}, 7, 1.0, true);
  auto loss = [&] { return sum(square(x)); };
  loss().backward();
  std::vector<double> once(x.grad().begin(), x.grad().end());
  loss().backward();
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * once[i]);
}

TEST(Backward, Errors) {
  Tensor x = random_tensor({3}, 8, 1.0, true);
  EXPECT_THROW(square(x).backward(), ShapeError);
  Tensor loss = sum(square(x));
  loss.backward();
  EXPECT_THROW(loss.backward(), ContractError);
}

TEST(Backward, ReusingConsumedIntermediateIsAnError) {
  Tensor x = random_tensor({3}, 9, 1.0, true);
  Tensor hidden = square(x);
  sum(hidden).backward();
  EXPECT_THROW(sum(mul(hidden, hidden)).backward(), ContractError);
  EXPECT_NO_THROW(sum(mul(hidden.detach(), x)).backward());
}

TEST(Backward, NoGradGuardSkipsRecording) {
  Tensor x = random_tensor({3}, 10, 1.0, true);
  NoGradGuard guard;
  Tensor y = square(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(GradCheck, SumOfSquares) {
  std::vector<Tensor> in{random_tensor({5, 4}, 1)};
  EXPECT_LT(grad_check([](const std::vector<Tensor>& v) { return sum(square(v[0])); }, in, 1e-5), 1e-7);
}

TEST(GradCheck, ConvComposedWithMse) {
  std::vector<Tensor> in{random_tensor({1, 2, 4, 3, 3}, 2), random_tensor({3, 2, 3, 3, 3}, 3, 0.5),
                         random_tensor({3}, 4)};
  Tensor target = random_tensor({1, 3, 2, 2, 2}, 5);
  auto f = [&](const std::vector<Tensor>& v) { return mse(conv3d(v[0], v[1], v[2], {2, 2, 2}, {1, 1, 1}), target); };
  EXPECT_LT(grad_check(f, in, 1e-5), 1e-4);
}

TEST(GradCheck, LeakyReluAwayFromKink) {
  std::vector<Tensor> in{random_away_from_zero({20}, 6)};
  EXPECT_LT(grad_check([](const std::vector<Tensor>& v) { return sum(square(leaky_relu(v[0], 0.01))); }, in, 1e-5),
            1e-7);
}

// Every registered operation over 20 seeds at eps 1e-5, tolerance 1e-4.
class OpGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(OpGradients, AllOpsPassFiniteDifferences) {
  const std::uint64_t seed = GetParam();
  const double tol = 1e-4;
  auto check = [&](const char* name, ScalarFunction f, std::vector<Tensor> inputs) {
    EXPECT_LT(grad_check(f, inputs, 1e-5), tol) << name << " seed " << seed;
  };
  Tensor w = random_tensor({2, 3, 2}, seed + 1000);  // fixed projection turns outputs into a scalar
  auto project = [w](const Tensor& t) { return sum(mul(t, w)); };

  check("add", [&](auto& v) { return project(add(v[0], v[1])); },
        {random_tensor({2, 3, 2}, seed), random_tensor({2, 1, 2}, seed + 1)});
  check("sub", [&](auto& v) { return project(sub(v[0], v[1])); },
        {random_tensor({2, 3, 2}, seed), random_tensor({2, 3}, seed + 1)});
  check("mul", [&](auto& v) { return project(mul(v[0], v[1])); },
        {random_tensor({2, 3, 2}, seed), random_tensor({1, 3, 1}, seed + 1)});
  check("scale", [&](auto& v) { return project(scale(v[0], -2.5)); }, {random_tensor({2, 3, 2}, seed)});
  check("add_scalar", [&](auto& v) { return project(add_scalar(v[0], 3.0)); }, {random_tensor({2, 3, 2}, seed)});
  check("exp", [&](auto& v) { return project(ad::exp(v[0])); }, {random_tensor({2, 3, 2}, seed, 0.5)});
  check("log1p", [&](auto& v) { return project(ad::log1p(ad::exp(v[0]))); }, {random_tensor({2, 3, 2}, seed)});
  check("square", [&](auto& v) { return project(square(v[0])); }, {random_tensor({2, 3, 2}, seed)});
  check("pow", [&](auto& v) { return project(pow_scalar(ad::exp(v[0]), 2.5)); }, {random_tensor({2, 3, 2}, seed, 0.3)});
  check("clamp", [&](auto& v) { return project(clamp(v[0], -0.03, 0.04)); }, {random_away_from_zero({2, 3, 2}, seed)});
  check("relu", [&](auto& v) { return project(relu(v[0])); }, {random_away_from_zero({2, 3, 2}, seed)});
  check("leaky_relu", [&](auto& v) { return project(leaky_relu(v[0], 0.01)); }, {random_away_from_zero({2, 3, 2}, seed)});
  check("mean", [&](auto& v) { return mean(square(v[0])); }, {random_tensor({2, 3, 2}, seed)});
  check("mse", [&](auto& v) { return mse(v[0], v[1]); }, {random_tensor({2, 3, 2}, seed), random_tensor({2, 3, 2}, seed + 5)});
  check("reshape", [&](auto& v) { return project(reshape(v[0], {2, 3, 2})); }, {random_tensor({3, 4}, seed)});
  check("concat", [&](auto& v) { return project(concat({v[0], v[1]}, 1)); },
        {random_tensor({2, 1, 2}, seed), random_tensor({2, 2, 2}, seed + 1)});
  check("slice", [&](auto& v) { return project(slice(v[0], 1, 1, 4)); }, {random_tensor({2, 5, 2}, seed)});
  check("pad", [&](auto& v) { return project(pad(v[0], 2, 1, 0)); }, {random_tensor({2, 3, 1}, seed)});
  check("gather", [&](auto& v) { return sum(square(gather(v[0], {0, 5, 5, 11}))); }, {random_tensor({2, 3, 2}, seed)});
  check("segment_sum", [&](auto& v) { return sum(square(segment_sum(v[0], {0, 2, 2, 1, 0}, 3))); },
        {random_tensor({5}, seed)});
  check("conv3d", [&](auto& v) { return sum(square(conv3d(v[0], v[1], v[2], {1, 2, 1}, {1, 1, 0}))); },
        {random_tensor({1, 2, 3, 4, 3}, seed), random_tensor({2, 2, 3, 3, 1}, seed + 1, 0.4), random_tensor({2}, seed + 2)});
  check("voxel_shuffle", [&](auto& v) { return sum(mul(voxel_shuffle(v[0], 2), v[1])); },
        {random_tensor({1, 8, 1, 2, 1}, seed), random_tensor({1, 1, 2, 4, 2}, seed + 1)});
  {
    Tensor mix = random_tensor({2, 3, 2, 2}, seed + 7);
    auto st = BatchNormState::identity(3);
    check("batch_norm/train", [&](auto& v) { return sum(mul(batch_norm(v[0], v[1], v[2], st, Mode::train), mix)); },
          {random_tensor({2, 3, 2, 2}, seed, 2.0), random_tensor({3}, seed + 1), random_tensor({3}, seed + 2)});
    check("batch_norm/eval", [&](auto& v) { return sum(mul(batch_norm(v[0], v[1], v[2], st, Mode::eval), mix)); },
          {random_tensor({2, 3, 2, 2}, seed, 2.0), random_tensor({3}, seed + 1), random_tensor({3}, seed + 2)});
  }
  check("trilinear_upsample", [&](auto& v) { return sum(mul(trilinear_upsample(v[0], {2, 3, 1}), v[1])); },
        {random_tensor({1, 1, 2, 2, 3}, seed), random_tensor({1, 1, 4, 6, 3}, seed + 1)});
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradients, ::testing::Range<std::uint64_t>(0, 20));

TEST(Determinism, SameInputsGiveBitIdenticalOutputs) {
  auto run = [] {
    Tensor x = random_tensor({1, 2, 4, 4, 4}, 77);
    Tensor k = random_tensor({4, 2, 3, 3, 3}, 78);
    auto st = BatchNormState::identity(4);
    Tensor y = leaky_relu(batch_norm(conv3d(x, k, Tensor(), {2, 2, 2}, {1, 1, 1}), Tensor::full({4}, 1.0),
                                     Tensor::zeros({4}), st, Mode::train));
    return std::vector<double>(y.data().begin(), y.data().end());
  };
  EXPECT_EQ(run(), run());
}
