#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "test_util.hpp"
#include "ukan/grad_check.hpp"
#include "ukan/kan.hpp"

using namespace ukan;
using ukan::test::cox_de_boor;
using ukan::test::oracle_knots;
using ukan::test::random_tensor;
using ukan::test::silu_ref;
using ukan::test::uniform_random;

namespace {

class KanTest : public ::testing::Test {
 protected:
  void SetUp() override { clear_tape<double>(); }
  void TearDown() override { clear_tape<double>(); }
};

}  // namespace

TEST_F(KanTest, CardinalCubicValues) {
  SplineSpec s{4, 3, -2.0, 2.0};
  Tensor<double> x({3}, {0.0, -1.0, 1.0});
  auto b = bspline_basis(x, s);
  ASSERT_EQ(b.shape(), (Shape{3, 7}));
  EXPECT_NEAR(b.data()[0 * 7 + 3], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(b.data()[1 * 7 + 3], 1.0 / 6.0, 1e-12);
  EXPECT_NEAR(b.data()[2 * 7 + 3], 1.0 / 6.0, 1e-12);
}

TEST_F(KanTest, BasisMatchesRecursiveOracle) {
  Rng rng(1);
  for (SplineSpec s : {SplineSpec{5, 3, -1, 1}, SplineSpec{3, 2, -0.5, 2}, SplineSpec{7, 1, 0, 1},
                       SplineSpec{4, 0, -1, 1}}) {
    auto t = oracle_knots(s);
    auto x = uniform_random<double>({64}, rng, s.grid_min - 0.3, s.grid_max + 0.3);
    x.data()[0] = s.grid_min;
    x.data()[1] = s.grid_max;
    auto b = bspline_basis(x, s);
    for (std::size_t n = 0; n < 64; ++n)
      for (std::size_t i = 0; i < s.num_basis(); ++i)
        EXPECT_NEAR(b.data()[n * s.num_basis() + i],
                    cox_de_boor(t, i, s.order, x.data()[n], t.back()), 1e-12)
            << "G=" << s.grid_size << " k=" << s.order << " x=" << x.data()[n] << " i=" << i;
  }
}

TEST_F(KanTest, PartitionOfUnityAndNonNegative) {
  Rng rng(2);
  SplineSpec s{6, 3, -1.5, 0.5};
  auto x = uniform_random<double>({500}, rng, -1.5, 0.5);
  x.data()[0] = -1.5;
  x.data()[1] = 0.5;
  auto b = bspline_basis(x, s);
  for (std::size_t n = 0; n < 500; ++n) {
    double total = 0;
    for (std::size_t i = 0; i < s.num_basis(); ++i) {
      const double v = b.data()[n * s.num_basis() + i];
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12) << x.data()[n];
  }
}

TEST_F(KanTest, LocalSupport) {
  Rng rng(3);
  SplineSpec s{5, 3, -1, 1};
  auto knots = s.knots();
  auto x = uniform_random<double>({200}, rng, -2.5, 2.5);
  auto b = bspline_basis(x, s);
  for (std::size_t n = 0; n < 200; ++n)
    for (std::size_t i = 0; i < s.num_basis(); ++i) {
      const double xv = x.data()[n];
      if (xv < knots[i] || xv >= knots[i + s.order + 1]) {
        EXPECT_EQ(b.data()[n * s.num_basis() + i], 0.0);
      }
    }
}

TEST_F(KanTest, BasisDerivativeGradCheck) {
  Rng rng(4);
  SplineSpec s{5, 3, -1, 1};
  auto x = uniform_random<double>({2, 5}, rng, -1.6, 1.6);
  auto w = random_tensor<double>({2, 5, 8}, rng);
  auto report = grad_check<double>(
      [&](const Tensor<double>& t) { return sum(mul(bspline_basis(t, s), w)); }, x);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST_F(KanTest, LayerShapeAndParamCount) {
  Rng rng(5);
  auto layer = KanLayer<double>::init(2, 2, SplineSpec{5, 3, -1, 1}, rng);
  ParamList<double> params;
  layer.collect(params, "kan");
  EXPECT_EQ(count_parameters(params), 40u);
  auto y = layer.forward(random_tensor<double>({7, 2}, rng));
  EXPECT_EQ(y.shape(), (Shape{7, 2}));
  EXPECT_THROW(layer.forward(Tensor<double>({7, 3})), ShapeError);
}

TEST_F(KanTest, LayerMatchesBruteForceDoubleSum) {
  Rng rng(6);
  SplineSpec s{5, 3, -1, 1};
  auto layer = KanLayer<double>::init(4, 3, s, rng);
  layer.spline_scale = uniform_random<double>({3, 4}, rng, 0.5, 1.5);
  auto t = oracle_knots(s);
  auto x = uniform_random<double>({5, 4}, rng, -1.2, 1.2);
  auto y = layer.forward(x);
  const std::size_t nb = s.num_basis();
  for (std::size_t n = 0; n < 5; ++n)
    for (std::size_t q = 0; q < 3; ++q) {
      double acc = 0;
      for (std::size_t p = 0; p < 4; ++p) {
        const double xv = x.data()[n * 4 + p];
        double spline = 0;
        for (std::size_t i = 0; i < nb; ++i)
          spline += layer.spline_coeffs.data()[(q * 4 + p) * nb + i] * cox_de_boor(t, i, 3, xv, t.back());
        acc += layer.base_weight.data()[q * 4 + p] * silu_ref(xv) +
               layer.spline_scale.data()[q * 4 + p] * spline;
      }
      EXPECT_NEAR(y.data()[n * 3 + q], acc, 1e-12);
    }
}

TEST_F(KanTest, LayerGradCheckAllParameters) {
  Rng rng(7);
  auto layer = KanLayer<double>::init(3, 2, SplineSpec{4, 3, -1, 1}, rng);
  auto x = uniform_random<double>({4, 3}, rng, -1.3, 1.3);
  auto w = random_tensor<double>({4, 2}, rng);
  std::function<Tensor<double>()> loss = [&] { return sum(mul(layer.forward(x), w)); };
  std::vector<Tensor<double>> tensors = {x, layer.spline_coeffs, layer.base_weight, layer.spline_scale};
  std::vector<std::pair<std::size_t, std::size_t>> probes;
  for (std::size_t t = 0; t < tensors.size(); ++t)
    for (std::size_t i = 0; i < tensors[t].numel(); ++i) probes.emplace_back(t, i);
  auto report = grad_check_probes<double>(loss, tensors, probes);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST_F(KanTest, InitStatistics) {
  Rng rng(8);
  SplineSpec s{5, 3, -1, 1};
  auto layer = KanLayer<double>::init(64, 64, s, rng);
  double ss = 0;
  for (double v : layer.spline_coeffs.data()) ss += v * v;
  const double sd = std::sqrt(ss / static_cast<double>(layer.spline_coeffs.numel()));
  EXPECT_NEAR(sd, 0.1 / std::sqrt(8.0), 0.003);
  const double bound = 1.0 / std::sqrt(64.0);
  for (double v : layer.base_weight.data()) EXPECT_LE(std::abs(v), bound);
  for (double v : layer.spline_scale.data()) EXPECT_EQ(v, 1.0);
}

TEST_F(KanTest, StackCompositionAndWidthCheck) {
  Rng rng(9);
  SplineSpec s;
  std::vector<KanLayer<double>> layers = {KanLayer<double>::init(3, 5, s, rng),
                                          KanLayer<double>::init(5, 2, s, rng)};
  auto x = uniform_random<double>({4, 3}, rng, -1, 1);
  auto y = kan_stack_forward<double>(x, layers);
  auto ref = layers[1].forward(layers[0].forward(x));
  EXPECT_EQ(y.to_vector(), ref.to_vector());
  std::vector<KanLayer<double>> bad = {KanLayer<double>::init(3, 5, s, rng),
                                       KanLayer<double>::init(4, 2, s, rng)};
  EXPECT_THROW(kan_stack_forward<double>(x, bad), ShapeError);
}

TEST_F(KanTest, TokenLayerVariants) {
  Rng rng(10);
  auto x = random_tensor<double>({3, 4}, rng);
  TokenLayer<double> id = IdentityLayer{};
  EXPECT_EQ(forward(id, x).to_vector(), x.to_vector());
  TokenLayer<double> mlp = MlpLayer<double>::init(4, 4, Activation::silu, rng);
  ParamList<double> params;
  collect(mlp, params, "mlp");
  EXPECT_EQ(count_parameters(params), 20u);
  const auto& m = std::get<MlpLayer<double>>(mlp);
  auto y = forward(mlp, x);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t q = 0; q < 4; ++q) {
      double acc = m.bias.data()[q];
      for (std::size_t p = 0; p < 4; ++p) acc += m.weight.data()[q * 4 + p] * x.data()[n * 4 + p];
      EXPECT_NEAR(y.data()[n * 4 + q], silu_ref(acc), 1e-12);
    }
}

TEST_F(KanTest, FloatAndDoubleAgree) {
  Rng rng(11);
  auto layer = KanLayer<double>::init(6, 4, SplineSpec{}, rng);
  KanLayer<float> lf;
  lf.n_in = 6;
  lf.n_out = 4;
  lf.spec = layer.spec;
  auto cast = [](const Tensor<double>& t) {
    std::vector<float> v(t.data().begin(), t.data().end());
    return Tensor<float>(t.shape(), std::move(v));
  };
  lf.spline_coeffs = cast(layer.spline_coeffs);
  lf.base_weight = cast(layer.base_weight);
  lf.spline_scale = cast(layer.spline_scale);
  auto x = uniform_random<double>({5, 6}, rng, -1, 1);
  auto yd = layer.forward(x);
  auto yf = lf.forward(cast(x));
  for (std::size_t i = 0; i < yd.numel(); ++i) EXPECT_NEAR(yf.data()[i], yd.data()[i], 1e-5);
}
