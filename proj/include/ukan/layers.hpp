#pragma once

// Parameter-holding wrappers around the functional ops.

#include <cmath>
#include <cstddef>
#include <string>

#include "ukan/module.hpp"
#include "ukan/nn_ops.hpp"
#include "ukan/ops.hpp"

namespace ukan {

template <class T>
struct Conv2d {
  Tensor<T> weight;  // (C_out, C_in / groups, k, k)
  Tensor<T> bias;    // (C_out)
  Conv2dOptions opt;

  static Conv2d init(std::size_t c_in, std::size_t c_out, std::size_t k, Conv2dOptions opt,
                     Rng& rng) {
    Conv2d c;
    const std::size_t fan_in = (c_in / opt.groups) * k * k;
    c.weight = kaiming_uniform<T>({c_out, c_in / opt.groups, k, k}, fan_in, rng);
    c.bias = kaiming_uniform<T>({c_out}, fan_in, rng);
    c.opt = opt;
    return c;
  }

  std::size_t out_channels() const { return weight.dim(0); }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, opt); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "weight"), weight, true});
    out.push_back({join_name(prefix, "bias"), bias, true});
  }
};

struct NormOptions {
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double ln_eps = 1e-6;
};

template <class T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;
  // Running statistics are updated in place by training-mode forwards, so the
  // handles are shared with every copy of this module.
  Tensor<T> running_mean, running_var;
  T momentum = static_cast<T>(0.1);
  T eps = static_cast<T>(1e-5);

  static BatchNorm2d init(std::size_t channels, const NormOptions& norm = {}) {
    BatchNorm2d bn;
    bn.gamma = constant_param<T>({channels}, T{1});
    bn.beta = constant_param<T>({channels}, T{0});
    bn.running_mean = Tensor<T>::full({channels}, T{0});
    bn.running_var = Tensor<T>::full({channels}, T{1});
    bn.momentum = static_cast<T>(norm.bn_momentum);
    bn.eps = static_cast<T>(norm.bn_eps);
    return bn;
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) const {
    auto rm = running_mean;  // shares storage, so training updates land in place
    auto rv = running_var;
    return batch_norm2d(x, gamma, beta, rm, rv, training, momentum, eps);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "gamma"), gamma, true});
    out.push_back({join_name(prefix, "beta"), beta, true});
    out.push_back({join_name(prefix, "running_mean"), running_mean, false});
    out.push_back({join_name(prefix, "running_var"), running_var, false});
  }
};

template <class T>
struct LayerNorm {
  Tensor<T> gamma, beta;
  T eps = static_cast<T>(1e-6);

  static LayerNorm init(std::size_t features, const NormOptions& norm = {}) {
    LayerNorm ln;
    ln.gamma = constant_param<T>({features}, T{1});
    ln.beta = constant_param<T>({features}, T{0});
    ln.eps = static_cast<T>(norm.ln_eps);
    return ln;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, eps); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "gamma"), gamma, true});
    out.push_back({join_name(prefix, "beta"), beta, true});
  }
};

template <class T>
struct Linear {
  Tensor<T> weight;  // (n_out, n_in)
  Tensor<T> bias;    // (n_out)

  static Linear init(std::size_t n_in, std::size_t n_out, Rng& rng) {
    Linear l;
    l.weight = kaiming_uniform<T>({n_out, n_in}, n_in, rng);
    l.bias = kaiming_uniform<T>({n_out}, n_in, rng);
    return l;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "weight"), weight, true});
    out.push_back({join_name(prefix, "bias"), bias, true});
  }
};

/// conv -> BN -> ReLU.
template <class T>
struct ConvBnRelu {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;

  static ConvBnRelu init(std::size_t c_in, std::size_t c_out, std::size_t k,
                         Conv2dOptions opt, const NormOptions& norm, Rng& rng) {
    return {Conv2d<T>::init(c_in, c_out, k, opt, rng), BatchNorm2d<T>::init(c_out, norm)};
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) const {
    return relu(bn.forward(conv.forward(x), training));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    conv.collect(out, join_name(prefix, "conv"));
    bn.collect(out, join_name(prefix, "bn"));
  }
};

}  // namespace ukan
