#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "ukan/grad_check.hpp"
#include "ukan/nn_ops.hpp"

using namespace ukan;
using ukan::test::random_tensor;

namespace {

class NnOpsTest : public ::testing::Test {
 protected:
  void SetUp() override { clear_tape<double>(); }
  void TearDown() override { clear_tape<double>(); }
};

// Direct six-loop cross-correlation with explicit zero padding.
std::vector<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w,
                               const Tensor<double>& bias, std::size_t stride,
                               std::size_t pad, std::size_t groups) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  const std::size_t cig = ci / groups, cog = co / groups;
  std::vector<double> out(n * co * ho * wo, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) {
          double acc = bias.defined() ? bias.data()[o] : 0.0;
          const std::size_t grp = o / cog;
          for (std::size_t c = 0; c < cig; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx * stride + j) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd))
                  continue;
                acc += x.data()[((b * ci + grp * cig + c) * h + iy) * wd + ix] *
                       w.data()[((o * cig + c) * kh + i) * kw + j];
              }
          out[((b * co + o) * ho + y) * wo + xx] = acc;
        }
  return out;
}

struct ConvCase {
  std::size_t n, ci, h, w, co, k, stride, pad, groups;
};

}  // namespace

TEST_F(NnOpsTest, ConvMatchesNaiveOracle) {
  Rng rng(1);
  const std::vector<ConvCase> cases = {
      {2, 3, 7, 6, 4, 3, 1, 1, 1}, {1, 4, 8, 8, 6, 3, 2, 1, 2}, {2, 5, 5, 5, 5, 3, 1, 1, 5},
      {1, 2, 9, 4, 3, 1, 1, 0, 1}, {1, 3, 6, 7, 2, 2, 2, 0, 1}, {1, 6, 33, 31, 4, 3, 1, 1, 1},
  };
  for (const auto& c : cases) {
    auto x = random_tensor<double>({c.n, c.ci, c.h, c.w}, rng);
    auto w = random_tensor<double>({c.co, c.ci / c.groups, c.k, c.k}, rng);
    auto b = random_tensor<double>({c.co}, rng);
    auto y = conv2d(x, w, b, {c.stride, c.pad, c.groups});
    auto ref = naive_conv(x, w, b, c.stride, c.pad, c.groups);
    ASSERT_EQ(y.numel(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-10);
  }
}

TEST_F(NnOpsTest, ConvLargeInputTiles) {
  // More output positions than a single im2col tile holds.
  Rng rng(2);
  auto x = random_tensor<double>({1, 8, 96, 96}, rng);
  auto w = random_tensor<double>({3, 8, 3, 3}, rng);
  auto y = conv2d(x, w, Tensor<double>(), {1, 1, 1});
  auto ref = naive_conv(x, w, Tensor<double>(), 1, 1, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y.data()[i], ref[i], 1e-10);
}

TEST_F(NnOpsTest, ConvGradients) {
  Rng rng(3);
  const std::vector<ConvCase> cases = {
      {2, 3, 5, 4, 2, 3, 1, 1, 1}, {1, 4, 6, 6, 4, 3, 2, 1, 2}, {2, 3, 4, 5, 3, 3, 1, 1, 3}};
  for (const auto& c : cases) {
    auto x = random_tensor<double>({c.n, c.ci, c.h, c.w}, rng);
    auto w = random_tensor<double>({c.co, c.ci / c.groups, c.k, c.k}, rng);
    auto b = random_tensor<double>({c.co}, rng);
    auto readout = random_tensor<double>(
        {c.n, c.co, (c.h + 2 * c.pad - c.k) / c.stride + 1, (c.w + 2 * c.pad - c.k) / c.stride + 1},
        rng);
    std::function<Tensor<double>()> loss = [&] {
      return sum(mul(conv2d(x, w, b, {c.stride, c.pad, c.groups}), readout));
    };
    std::vector<std::pair<std::size_t, std::size_t>> probes;
    for (std::size_t i = 0; i < x.numel(); ++i) probes.emplace_back(0, i);
    for (std::size_t i = 0; i < w.numel(); ++i) probes.emplace_back(1, i);
    for (std::size_t i = 0; i < b.numel(); ++i) probes.emplace_back(2, i);
    auto report = grad_check_probes<double>(loss, {x, w, b}, probes);
    EXPECT_TRUE(report.passed) << "groups " << c.groups << " err " << report.max_rel_error;
  }
}

TEST_F(NnOpsTest, ConvRejectsBadGroups) {
  Tensor<double> x({1, 3, 4, 4}), w({4, 1, 3, 3});
  EXPECT_THROW(conv2d(x, w, Tensor<double>(), {1, 1, 2}), ShapeError);
  Tensor<double> w2({2, 2, 3, 3});
  EXPECT_THROW(conv2d(x, w2, Tensor<double>(), {1, 1, 1}), ShapeError);
}

TEST_F(NnOpsTest, DepthwiseMatchesGroupedOracle) {
  Rng rng(4);
  auto x = random_tensor<double>({2, 5, 6, 7}, rng);
  auto w = random_tensor<double>({5, 1, 3, 3}, rng);
  auto b = random_tensor<double>({5}, rng);
  auto y = depthwise_conv2d(x, w, b);
  auto ref = naive_conv(x, w, b, 1, 1, 5);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST_F(NnOpsTest, MaxPoolValuesAndTieRouting) {
  Tensor<double> x({1, 1, 2, 4}, {1, 5, 2, 2, 3, 5, 2, 2}, true);
  auto y = maxpool2x2(x);
  EXPECT_EQ(y.to_vector(), (std::vector<double>{5, 2}));
  backward(sum(y));
  // Ties go to the first maximum in row-major order.
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()),
            (std::vector<double>{0, 1, 1, 0, 0, 0, 0, 0}));
  Tensor<double> odd({1, 1, 3, 4});
  EXPECT_THROW(maxpool2x2(odd), ShapeError);
}

TEST_F(NnOpsTest, MaxPoolGradCheck) {
  Rng rng(5);
  auto x = random_tensor<double>({2, 2, 4, 6}, rng);
  auto w = random_tensor<double>({2, 2, 2, 3}, rng);
  auto report = grad_check<double>([&](const Tensor<double>& t) { return sum(mul(maxpool2x2(t), w)); }, x);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST_F(NnOpsTest, BilinearUpsampleClosedForm) {
  // Half-pixel centres: output sample u maps to source (u + 0.5) / 2 - 0.5,
  // clamped at the borders.
  Tensor<double> x({1, 1, 1, 3}, {0, 4, 8});
  auto y = resize_bilinear(x, 1, 6);
  EXPECT_EQ(y.to_vector(), (std::vector<double>{0, 1, 3, 5, 7, 8}));
  Tensor<double> c({1, 1, 2, 2}, {1, 1, 1, 1});
  for (double v : upsample_bilinear2x(c).to_vector()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST_F(NnOpsTest, BilinearGradCheck) {
  Rng rng(6);
  auto x = random_tensor<double>({1, 2, 3, 4}, rng);
  auto w = random_tensor<double>({1, 2, 6, 8}, rng);
  auto report = grad_check<double>(
      [&](const Tensor<double>& t) { return sum(mul(upsample_bilinear2x(t), w)); }, x);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
  auto w2 = random_tensor<double>({1, 2, 5, 3}, rng);
  auto report2 = grad_check<double>(
      [&](const Tensor<double>& t) { return sum(mul(resize_bilinear(t, 5, 3), w2)); }, x);
  EXPECT_TRUE(report2.passed) << report2.max_rel_error;
}

TEST_F(NnOpsTest, BatchNormIdentityInitNormalizes) {
  Rng rng(7);
  auto x = random_tensor<double>({4, 3, 5, 5}, rng, 3.0);
  for (double& v : x.data()) v += 2.0;
  auto gamma = Tensor<double>::full({3}, 1.0), beta = Tensor<double>({3});
  auto rm = Tensor<double>({3}), rv = Tensor<double>::full({3}, 1.0);
  for (double eps : {1e-7, 1e-5}) {
    auto y = batch_norm2d(x, gamma, beta, rm, rv, true, 0.1, eps);
    const double tol = eps == 1e-7 ? 1e-6 : 1e-4;
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0, ss = 0;
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t i = 0; i < 25; ++i) s += y.data()[(b * 3 + c) * 25 + i];
      const double m = s / 100;
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t i = 0; i < 25; ++i) {
          const double d = y.data()[(b * 3 + c) * 25 + i] - m;
          ss += d * d;
        }
      EXPECT_NEAR(m, 0.0, 1e-12);
      EXPECT_NEAR(ss / 100, 1.0, tol) << "eps " << eps;
    }
  }
}

TEST_F(NnOpsTest, BatchNormRunningStatsTwoPass) {
  Rng rng(8);
  auto x = random_tensor<double>({3, 2, 2, 3}, rng);
  auto gamma = Tensor<double>::full({2}, 1.0), beta = Tensor<double>({2});
  auto rm = Tensor<double>({2}, {0.5, -0.5}), rv = Tensor<double>({2}, {2.0, 1.0});
  batch_norm2d(x, gamma, beta, rm, rv, true, 0.1, 1e-5);
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> vals;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t i = 0; i < 6; ++i) vals.push_back(x.data()[(b * 2 + c) * 6 + i]);
    double m = 0;
    for (double v : vals) m += v;
    m /= vals.size();
    double var = 0;
    for (double v : vals) var += (v - m) * (v - m);
    var /= vals.size() - 1;
    const double m0 = c == 0 ? 0.5 : -0.5, v0 = c == 0 ? 2.0 : 1.0;
    EXPECT_NEAR(rm.data()[c], 0.9 * m0 + 0.1 * m, 1e-12);
    EXPECT_NEAR(rv.data()[c], 0.9 * v0 + 0.1 * var, 1e-12);
  }
}

TEST_F(NnOpsTest, BatchNormEvalUsesRunningStats) {
  Tensor<double> x({1, 1, 1, 2}, {3.0, 5.0});
  auto gamma = Tensor<double>::full({1}, 2.0), beta = Tensor<double>::full({1}, 1.0);
  auto rm = Tensor<double>({1}, {1.0}), rv = Tensor<double>({1}, {4.0});
  auto y = batch_norm2d(x, gamma, beta, rm, rv, false, 0.1, 0.0);
  EXPECT_EQ(y.to_vector(), (std::vector<double>{3.0, 5.0}));
  EXPECT_EQ(rm.data()[0], 1.0);
  EXPECT_THROW(batch_norm2d(x, gamma, beta, rm, rv, true, 0.1, 1e-5), ShapeError);
}

TEST_F(NnOpsTest, BatchNormGradCheck) {
  Rng rng(9);
  auto x = random_tensor<double>({3, 2, 2, 2}, rng);
  auto gamma = random_tensor<double>({2}, rng), beta = random_tensor<double>({2}, rng);
  auto w = random_tensor<double>({3, 2, 2, 2}, rng);
  for (bool training : {true, false}) {
    auto rm = Tensor<double>({2}, {0.1, 0.2}), rv = Tensor<double>({2}, {1.5, 0.7});
    std::function<Tensor<double>()> loss = [&] {
      auto m = rm, v = rv;  // keep running stats fixed across probes
      Tensor<double> mm(m.shape(), m.to_vector()), vv(v.shape(), v.to_vector());
      return sum(mul(batch_norm2d(x, gamma, beta, mm, vv, training, 0.1, 1e-5), w));
    };
    std::vector<std::pair<std::size_t, std::size_t>> probes;
    for (std::size_t i = 0; i < x.numel(); ++i) probes.emplace_back(0, i);
    for (std::size_t i = 0; i < 2; ++i) probes.emplace_back(1, i), probes.emplace_back(2, i);
    auto report = grad_check_probes<double>(loss, {x, gamma, beta}, probes);
    EXPECT_TRUE(report.passed) << "training " << training << " " << report.max_rel_error;
  }
}

TEST_F(NnOpsTest, LayerNormNormalizesLastAxis) {
  Rng rng(10);
  auto x = random_tensor<double>({6, 32}, rng, 10.0);
  auto gamma = Tensor<double>::full({32}, 1.0), beta = Tensor<double>({32});
  auto y = layer_norm(x, gamma, beta, 1e-6);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0, ss = 0;
    for (std::size_t i = 0; i < 32; ++i) s += y.data()[r * 32 + i];
    const double m = s / 32;
    for (std::size_t i = 0; i < 32; ++i) ss += std::pow(y.data()[r * 32 + i] - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(ss / 32, 1.0, 1e-6);
  }
}

TEST_F(NnOpsTest, LayerNormGradCheck) {
  Rng rng(11);
  auto x = random_tensor<double>({2, 3, 5}, rng);
  auto gamma = random_tensor<double>({5}, rng), beta = random_tensor<double>({5}, rng);
  auto w = random_tensor<double>({2, 3, 5}, rng);
  std::function<Tensor<double>()> loss = [&] { return sum(mul(layer_norm(x, gamma, beta, 1e-6), w)); };
  std::vector<std::pair<std::size_t, std::size_t>> probes;
  for (std::size_t i = 0; i < x.numel(); ++i) probes.emplace_back(0, i);
  for (std::size_t i = 0; i < 5; ++i) probes.emplace_back(1, i), probes.emplace_back(2, i);
  auto report = grad_check_probes<double>(loss, {x, gamma, beta}, probes);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST_F(NnOpsTest, ConvFlopCount) {
  Tensor<double> x({1, 2, 4, 4}), w({3, 2, 3, 3});
  FlopScope scope;
  conv2d(x, w, Tensor<double>(), {1, 1, 1});
  EXPECT_EQ(scope.count(), 2u * 3 * 16 * 18);
}
