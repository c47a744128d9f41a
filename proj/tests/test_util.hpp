#pragma once

#include <random>

#include "ukan/module.hpp"
#include "ukan/tensor.hpp"

namespace ukan::test {

template <class T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <class T>
Tensor<T> uniform_random(Shape shape, Rng& rng, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace ukan::test
