#pragma once

// Kolmogorov-Arnold layers and the plain affine (MLP) layer used in their place
// for ablations.
//
// A KAN layer holds one learnable univariate function per (output q, input p)
// edge:
//
//   phi_qp(x) = base_weight[q,p] * silu(x)
//             + spline_scale[q,p] * sum_i coeffs[q,p,i] * B_i(x)
//
// and out[q] = sum_p phi_qp(x[p]). The spline term is evaluated as one matrix
// product of the flattened bases with the scaled coefficient matrix.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "ukan/module.hpp"
#include "ukan/ops.hpp"
#include "ukan/spline.hpp"

namespace ukan {

template <class T>
struct KanLayer {
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  SplineSpec spec;
  Tensor<T> spline_coeffs;  // (n_out, n_in, G + k)
  Tensor<T> base_weight;    // (n_out, n_in)
  Tensor<T> spline_scale;   // (n_out, n_in)

  static KanLayer init(std::size_t n_in, std::size_t n_out, const SplineSpec& spec,
                       Rng& rng) {
    spec.validate();
    KanLayer layer;
    layer.n_in = n_in;
    layer.n_out = n_out;
    layer.spec = spec;
    const std::size_t nb = spec.num_basis();
    layer.spline_coeffs = normal_tensor<T>(
        {n_out, n_in, nb}, static_cast<T>(0.1 / std::sqrt(static_cast<double>(nb))), rng);
    layer.base_weight = kaiming_uniform<T>({n_out, n_in}, n_in, rng);
    layer.spline_scale = constant_param<T>({n_out, n_in}, T{1});
    return layer;
  }

  /// x: (batch, n_in) -> (batch, n_out).
  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != n_in) {
      throw ShapeError("kan_layer: input " + to_string(x.shape()) + " but layer expects (*, " +
                       std::to_string(n_in) + ")");
    }
    const std::size_t batch = x.dim(0), nb = spec.num_basis();
    auto bases = reshape(bspline_basis(x, spec), {batch, n_in * nb});
    auto scaled = mul(spline_coeffs, reshape(spline_scale, {n_out, n_in, 1}));
    auto spline_out = linear(bases, reshape(scaled, {n_out, n_in * nb}));
    auto base_out = linear(silu(x), base_weight);
    return add(base_out, spline_out);
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "spline_coeffs"), spline_coeffs, true});
    out.push_back({join_name(prefix, "base_weight"), base_weight, true});
    out.push_back({join_name(prefix, "spline_scale"), spline_scale, true});
  }
};

template <class T>
struct MlpLayer {
  Tensor<T> weight;  // (n_out, n_in)
  Tensor<T> bias;    // (n_out)
  Activation act = Activation::silu;

  static MlpLayer init(std::size_t n_in, std::size_t n_out, Activation act, Rng& rng) {
    MlpLayer layer;
    layer.weight = kaiming_uniform<T>({n_out, n_in}, n_in, rng);
    layer.bias = kaiming_uniform<T>({n_out}, n_in, rng);
    layer.act = act;
    return layer;
  }

  std::size_t n_in() const { return weight.dim(1); }
  std::size_t n_out() const { return weight.dim(0); }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != n_in()) {
      throw ShapeError("mlp_layer: input " + to_string(x.shape()) + " but layer expects (*, " +
                       std::to_string(n_in()) + ")");
    }
    return activation(act, linear(x, weight, bias));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "weight"), weight, true});
    out.push_back({join_name(prefix, "bias"), bias, true});
  }
};

/// Passes tokens through unchanged; keeps its layer slot in ablations.
struct IdentityLayer {};

template <class T>
using TokenLayer = std::variant<KanLayer<T>, MlpLayer<T>, IdentityLayer>;

template <class T>
Tensor<T> forward(const TokenLayer<T>& layer, const Tensor<T>& x) {
  return std::visit(
      [&x](const auto& l) -> Tensor<T> {
        if constexpr (std::is_same_v<std::decay_t<decltype(l)>, IdentityLayer>) {
          return x;
        } else {
          return l.forward(x);
        }
      },
      layer);
}

template <class T>
void collect(const TokenLayer<T>& layer, ParamList<T>& out, const std::string& prefix) {
  std::visit(
      [&](const auto& l) {
        if constexpr (!std::is_same_v<std::decay_t<decltype(l)>, IdentityLayer>)
          l.collect(out, prefix);
      },
      layer);
}

/// Composition of KAN layers in order; consecutive widths must chain.
template <class T>
Tensor<T> kan_stack_forward(const Tensor<T>& x, std::span<const KanLayer<T>> layers) {
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (layers[i - 1].n_out != layers[i].n_in) {
      throw ShapeError("kan_stack: layer " + std::to_string(i - 1) + " outputs " +
                       std::to_string(layers[i - 1].n_out) + " but layer " +
                       std::to_string(i) + " expects " + std::to_string(layers[i].n_in));
    }
  }
  Tensor<T> h = x;
  for (const auto& layer : layers) h = layer.forward(h);
  return h;
}

}  // namespace ukan
