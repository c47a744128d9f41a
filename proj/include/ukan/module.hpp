#pragma once

// Parameter bookkeeping and initializers shared by all layers.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ukan/tensor.hpp"

namespace ukan {

using Rng = std::mt19937_64;

/// Independent stream for (seed, stream); used wherever results must not depend
/// on how work is batched.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;  // false for running statistics
};

template <class T>
using ParamList = std::vector<NamedTensor<T>>;

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

template <class T>
std::size_t count_parameters(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params)
    if (p.trainable) n += p.tensor.numel();
  return n;
}

template <class T>
Tensor<T> uniform_tensor(Shape shape, T bound, Rng& rng) {
  Tensor<T> t(std::move(shape), true);
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound),
                                              static_cast<double>(bound));
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <class T>
Tensor<T> normal_tensor(Shape shape, T stddev, Rng& rng, bool requires_grad = true) {
  Tensor<T> t(std::move(shape), requires_grad);
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

/// Kaiming-uniform with a = sqrt(5): bound = 1 / sqrt(fan_in).
template <class T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  return uniform_tensor<T>(std::move(shape),
                           static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in))),
                           rng);
}

template <class T>
Tensor<T> constant_param(Shape shape, T value) {
  auto t = Tensor<T>::full(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace ukan
