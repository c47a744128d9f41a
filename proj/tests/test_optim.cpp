#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "ukan/ops.hpp"
#include "ukan/optim.hpp"

using namespace ukan;

namespace {

ParamList<double> single(const Tensor<double>& t) { return {{"p", t, true}}; }

void set_grad(Tensor<double>& t, const std::vector<double>& g) {
  t.zero_grad();
  t.impl()->grad = g;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor<double> p({1}, {0.0}, true);
  Adam<double> opt(single(p), {});
  set_grad(p, {1.0});
  opt.step(0.1);
  EXPECT_NEAR(p.data()[0], -0.1, 1e-6);
  set_grad(p, {1.0});
  opt.step(0.1);
  EXPECT_NEAR(p.data()[0], -0.2, 1e-6);
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(Adam, MatchesScalarRecurrence) {
  Tensor<double> p({3}, {0.5, -1.0, 2.0}, true);
  Adam<double> opt(single(p), {0.8, 0.99, 1e-6});
  std::vector<double> ref = p.to_vector(), m(3, 0), v(3, 0);
  const std::vector<std::vector<double>> grads = {
      {0.3, -2.0, 1e-3}, {-0.1, 4.0, 0.0}, {0.7, 0.5, -3.0}, {0.2, 0.2, 0.2}};
  int t = 0;
  for (const auto& g : grads) {
    set_grad(p, g);
    opt.step(0.05);
    ++t;
    for (int i = 0; i < 3; ++i) {
      m[i] = 0.8 * m[i] + 0.2 * g[i];
      v[i] = 0.99 * v[i] + 0.01 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.8, t));
      const double vh = v[i] / (1 - std::pow(0.99, t));
      ref[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-6);
    }
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(p.data()[i], ref[i], 1e-14);
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor<double> p({2}, {1.5, -0.5}, true);
  Adam<double> opt(single(p), {});
  set_grad(p, {0.0, 0.0});
  opt.step(1e-3);
  EXPECT_EQ(p.to_vector(), (std::vector<double>{1.5, -0.5}));
  p.zero_grad();  // no gradient at all is also a no-op
  opt.step(1e-3);
  EXPECT_EQ(p.to_vector(), (std::vector<double>{1.5, -0.5}));
}

TEST(Adam, NonFiniteGradientThrowsBeforeUpdating) {
  Tensor<double> a({1}, {1.0}, true), b({1}, {2.0}, true);
  Adam<double> opt({{"a", a, true}, {"b", b, true}}, {});
  set_grad(a, {0.5});
  set_grad(b, {std::numeric_limits<double>::quiet_NaN()});
  EXPECT_THROW(opt.step(0.1), NonFiniteError);
  EXPECT_EQ(a.data()[0], 1.0);
  EXPECT_EQ(opt.steps(), 0u);
  set_grad(b, {std::numeric_limits<double>::infinity()});
  try {
    opt.step(0.1);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
}

TEST(Adam, SkipsBuffers) {
  Tensor<double> w({1}, {1.0}, true), stat({1}, {3.0});
  Adam<double> opt({{"w", w, true}, {"running", stat, false}}, {});
  EXPECT_EQ(opt.names(), (std::vector<std::string>{"w"}));
}

TEST(Adam, MinimisesQuadratic) {
  Tensor<double> p({2}, {3.0, -4.0}, true);
  Adam<double> opt(single(p), {});
  for (int i = 0; i < 2000; ++i) {
    clear_tape<double>();
    opt.zero_grad();
    backward(sum(square(p)));
    opt.step(0.05);
  }
  clear_tape<double>();
  EXPECT_NEAR(p.data()[0], 0.0, 1e-2);
  EXPECT_NEAR(p.data()[1], 0.0, 1e-2);
}

TEST(CosineLr, EndpointsAndMidpoint) {
  EXPECT_NEAR(cosine_lr(0, 100, 1e-4, 1e-5), 1e-4, 1e-18);
  EXPECT_NEAR(cosine_lr(100, 100, 1e-4, 1e-5), 1e-5, 1e-18);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-4, 1e-5), 5.5e-5, 1e-18);
  EXPECT_NEAR(cosine_lr(150, 100, 1e-4, 1e-5), 1e-5, 1e-18);
  for (std::size_t e = 1; e <= 100; ++e)
    EXPECT_LE(cosine_lr(e, 100, 1e-4, 1e-5), cosine_lr(e - 1, 100, 1e-4, 1e-5));
}
