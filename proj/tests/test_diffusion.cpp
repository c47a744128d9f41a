#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "ukan/diffusion.hpp"
#include "ukan/model.hpp"
#include "ukan/ops.hpp"

using namespace ukan;

namespace {

NoisePredictor<double> zero_model() {
  return [](const Tensor<double>& x, const std::vector<std::size_t>&) {
    return Tensor<double>(x.shape());
  };
}

}  // namespace

TEST(NoiseSchedule, MatchesIndependentProduct) {
  auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  ASSERT_EQ(s.steps(), 1000u);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_NEAR(s.beta(1000), 0.02, 1e-15);
  // Log-space product as the oracle.
  double log_ab = 0;
  for (std::size_t t = 1; t <= 1000; ++t) {
    const double beta = 1e-4 + (0.02 - 1e-4) * static_cast<double>(t - 1) / 999.0;
    log_ab += std::log1p(-beta);
    EXPECT_NEAR(s.alpha_bar(t), std::exp(log_ab), 1e-12) << "t=" << t;
    EXPECT_NEAR(s.alpha(t), 1 - beta, 1e-15);
  }
  for (std::size_t t = 2; t <= 1000; ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
}

TEST(NoiseSchedule, RejectsOutOfRangeTimesteps) {
  auto s = NoiseSchedule::linear(10);
  EXPECT_THROW(s.alpha_bar(0), std::out_of_range);
  EXPECT_THROW(s.alpha_bar(11), std::out_of_range);
  Tensor<double> x({1, 1, 2, 2});
  EXPECT_THROW(q_sample(s, x, {0}, x), std::out_of_range);
  EXPECT_THROW(q_sample(s, x, {11}, x), std::out_of_range);
  EXPECT_THROW(NoiseSchedule::linear(0), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.1, 0.01), std::invalid_argument);
}

TEST(QSample, ZeroNoiseScalesSignal) {
  auto s = NoiseSchedule::linear();
  Tensor<double> x0({2, 1, 2, 2}, {1, -2, 3, 0.5, 0.25, -1, 2, 4});
  Tensor<double> eps(x0.shape());
  auto xt = q_sample(s, x0, {1, 500}, eps);
  for (std::size_t i = 0; i < 8; ++i) {
    const double ab = s.alpha_bar(i < 4 ? 1 : 500);
    EXPECT_NEAR(xt.data()[i], std::sqrt(ab) * x0.data()[i], 1e-15);
  }
}

TEST(QSample, MomentsAtFinalStep) {
  auto s = NoiseSchedule::linear();
  const std::size_t n = 10000;
  Tensor<double> x0 = Tensor<double>::full({n, 1, 1, 1}, 1.0);
  auto rng = make_rng(11);
  auto eps = standard_normal<double>(x0.shape(), rng);
  auto xt = q_sample(s, x0, std::vector<std::size_t>(n, 1000), eps);
  double mean = 0, sq = 0;
  for (double v : xt.to_vector()) mean += v;
  mean /= n;
  for (double v : xt.to_vector()) sq += (v - mean) * (v - mean);
  const double var = sq / (n - 1);
  EXPECT_NEAR(mean, std::sqrt(s.alpha_bar(1000)), 0.05);
  EXPECT_NEAR(mean, 0.0, 0.05);
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(DiffusionLoss, ZeroPredictorGivesUnitLoss) {
  auto s = NoiseSchedule::linear();
  auto rng = make_rng(3);
  Tensor<double> x0 = Tensor<double>::full({256, 1, 8, 8}, 0.3);
  const double loss = diffusion_loss<double>(s, zero_model(), x0, rng).item();
  EXPECT_NEAR(loss, 1.0, 0.05);
}

TEST(DiffusionLoss, ExactPredictorGivesZeroLoss) {
  auto s = NoiseSchedule::linear();
  auto rng = make_rng(4);
  auto data_rng = make_rng(5);
  auto x0 = standard_normal<double>({4, 1, 4, 4}, data_rng);
  // Recovers eps from x_t by inverting the forward process.
  NoisePredictor<double> oracle = [&](const Tensor<double>& xt, const std::vector<std::size_t>& t) {
    Tensor<double> eps(xt.shape());
    const std::size_t per = xt.numel() / xt.dim(0);
    for (std::size_t b = 0; b < t.size(); ++b) {
      const double ab = s.alpha_bar(t[b]);
      for (std::size_t i = b * per; i < (b + 1) * per; ++i)
        eps.data()[i] = (xt.data()[i] - std::sqrt(ab) * x0.data()[i]) / std::sqrt(1 - ab);
    }
    return eps;
  };
  EXPECT_LT(diffusion_loss<double>(s, oracle, x0, rng).item(), 1e-20);
}

TEST(DiffusionLoss, FlowsGradientIntoModel) {
  auto s = NoiseSchedule::linear(50);
  auto rng = make_rng(6);
  Tensor<double> w({1}, {0.5}, true);
  NoisePredictor<double> model = [&](const Tensor<double>& xt, const std::vector<std::size_t>&) {
    return mul(xt, w);
  };
  clear_tape<double>();
  auto x0 = Tensor<double>::full({2, 1, 2, 2}, 0.1);
  backward(diffusion_loss<double>(s, model, x0, rng));
  ASSERT_TRUE(w.has_grad());
  EXPECT_TRUE(std::isfinite(w.grad()[0]));
  EXPECT_NE(w.grad()[0], 0.0);
  clear_tape<double>();
}

TEST(DdpmSample, ThreeStepRecursionByHand) {
  auto s = NoiseSchedule::linear(3, 0.1, 0.3);
  const double c = 0.2;
  NoisePredictor<double> model = [c](const Tensor<double>& x, const std::vector<std::size_t>&) {
    return Tensor<double>::full(x.shape(), c);
  };
  auto out = ddpm_sample<double>(s, model, 2, {1, 1, 2}, 77, {.batch_size = 2, .clip = false});
  ASSERT_EQ(out.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    auto rng = make_rng(77, i);
    std::normal_distribution<double> normal(0.0, 1.0);
    double x[2] = {normal(rng), normal(rng)};
    for (int t = 3; t >= 1; --t) {
      const double beta = 0.1 + 0.1 * (t - 1);
      double ab = 1;
      for (int u = 1; u <= t; ++u) ab *= 1 - (0.1 + 0.1 * (u - 1));
      for (double& v : x) {
        v = (v - beta / std::sqrt(1 - ab) * c) / std::sqrt(1 - beta);
        if (t > 1) v += std::sqrt(beta) * normal(rng);
      }
    }
    ASSERT_EQ(out[i].shape(), (Shape{1, 1, 1, 2}));
    EXPECT_NEAR(out[i].data()[0], x[0], 1e-12);
    EXPECT_NEAR(out[i].data()[1], x[1], 1e-12);
  }
}

TEST(DdpmSample, IndependentOfBatchSizeAndDeterministic) {
  auto s = NoiseSchedule::linear(20);
  auto a = ddpm_sample<double>(s, zero_model(), 5, {1, 3, 3}, 9, {.batch_size = 5});
  auto b = ddpm_sample<double>(s, zero_model(), 5, {1, 3, 3}, 9, {.batch_size = 2});
  auto c = ddpm_sample<double>(s, zero_model(), 5, {1, 3, 3}, 9, {.batch_size = 1});
  auto d = ddpm_sample<double>(s, zero_model(), 5, {1, 3, 3}, 10, {.batch_size = 5});
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a[i].to_vector(), b[i].to_vector());
    EXPECT_EQ(a[i].to_vector(), c[i].to_vector());
    EXPECT_NE(a[i].to_vector(), d[i].to_vector());
  }
}

TEST(DdpmSample, OutputIsClipped) {
  auto s = NoiseSchedule::linear(10);
  NoisePredictor<double> big = [](const Tensor<double>& x, const std::vector<std::size_t>&) {
    return Tensor<double>::full(x.shape(), -50.0);
  };
  auto out = ddpm_sample<double>(s, big, 3, {1, 4, 4}, 1);
  for (const auto& img : out)
    for (double v : img.to_vector()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
}

TEST(DdpmSample, RunsWithTimeConditionedModel) {
  UkanConfig cfg = UkanConfig::profile("small");
  cfg.conv_channels = {4};
  cfg.kan_dims = {8, 8};
  cfg.layers_per_block = 1;
  cfg.in_channels = 1;
  cfg.out_channels = 1;
  cfg.time_conditioned = true;
  cfg.time_embed_dim = 16;
  auto model = UKan<double>::init(cfg, 2);
  auto s = NoiseSchedule::linear(5);
  NoisePredictor<double> pred = [&](const Tensor<double>& x, const std::vector<std::size_t>& t) {
    return model.forward(x, false, t);
  };
  auto out = ddpm_sample<double>(s, pred, 2, {1, 8, 8}, 3);
  ASSERT_EQ(out.size(), 2u);
  for (const auto& img : out)
    for (double v : img.to_vector()) EXPECT_TRUE(std::isfinite(v));
}
