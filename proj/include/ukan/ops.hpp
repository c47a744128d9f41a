#pragma once

// Differentiable primitives: broadcasting arithmetic, elementwise functions,
// reductions, layout ops and matrix products.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ukan/detail/gemm.hpp"
#include "ukan/tensor.hpp"

namespace ukan {

namespace detail {

// Trailing-dimension alignment: the shorter shape is padded with leading 1s,
// then each axis must agree or be 1 on one side.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_stride;  // 0 on broadcast axes
  std::vector<std::size_t> b_stride;
  bool same = false;
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b,
                                    std::string_view op) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t r = std::max(a.size(), b.size());
  auto padded = [r](const Shape& s) {
    Shape p(r - s.size(), 1);
    p.insert(p.end(), s.begin(), s.end());
    return p;
  };
  const Shape pa = padded(a), pb = padded(b);
  plan.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) +
                       " with " + to_string(b) + " (axis " + std::to_string(i) +
                       ": " + std::to_string(pa[i]) + " vs " +
                       std::to_string(pb[i]) + ")");
    }
    plan.out[i] = std::max(pa[i], pb[i]);
  }
  auto strides = [r](const Shape& p) {
    std::vector<std::size_t> s(r, 0);
    std::size_t acc = 1;
    for (std::size_t i = r; i-- > 0;) {
      s[i] = p[i] == 1 ? 0 : acc;
      acc *= p[i];
    }
    return s;
  };
  plan.a_stride = strides(pa);
  plan.b_stride = strides(pb);
  return plan;
}

// Calls f(out_index, a_index, b_index) for every output element in order.
template <class F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const std::size_t n = numel_of(plan.out);
  if (plan.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = plan.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += plan.a_stride[d];
      ib += plan.b_stride[d];
      if (idx[d] < plan.out[d]) break;
      ia -= plan.a_stride[d] * idx[d];
      ib -= plan.b_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
}

// Binary op with partial derivatives da(x, y) and db(x, y).
template <class T, class F, class Da, class Db>
Tensor<T> binary(std::string_view name, const Tensor<T>& a, const Tensor<T>& b,
                 F f, Da da, Db db) {
  auto plan = std::make_shared<BroadcastPlan>(
      plan_broadcast(a.shape(), b.shape(), name));
  std::vector<T> out(numel_of(plan->out));
  const auto av = a.data();
  const auto bv = b.data();
  for_each_broadcast(*plan, [&](std::size_t o, std::size_t i, std::size_t j) {
    out[o] = f(av[i], bv[j]);
  });
  add_flops(out.size());
  auto ai = a.impl(), bi = b.impl();
  return make_result<T>(
      name, plan->out, std::move(out), {&a, &b},
      [plan, ai, bi, da, db](std::span<const T> g) {
        const auto& x = ai->data;
        const auto& y = bi->data;
        T* ga = ai->requires_grad ? grad_buffer(*ai).data() : nullptr;
        T* gb = bi->requires_grad ? grad_buffer(*bi).data() : nullptr;
        for_each_broadcast(*plan,
                           [&](std::size_t o, std::size_t i, std::size_t j) {
                             if (ga) ga[i] += g[o] * da(x[i], y[j]);
                             if (gb) gb[j] += g[o] * db(x[i], y[j]);
                           });
      });
}

// Elementwise op; df(x, y) is the derivative given input x and output y.
template <class T, class F, class Df>
Tensor<T> unary(std::string_view name, const Tensor<T>& x, F f, Df df,
                std::uint64_t flops_per_element = 1) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  add_flops(flops_per_element * out.size());
  check_finite<T>(name, out);
  Tensor<T> result(x.shape(), std::move(out));
  // The output impl is owned by the recorded op, so the raw pointer outlives
  // the closure.
  const TensorImpl<T>* yi = result.impl().get();
  auto xi = x.impl();
  record_if_needed(name, result, {&x}, [xi, yi, df](std::span<const T> g) {
    if (!xi->requires_grad) return;
    auto gx = grad_buffer(*xi);
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += g[i] * df(xi->data[i], yi->data[i]);
  });
  return result;
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{1}; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{-1}; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T, T y) { return T{1} / y; }, [](T x, T y) { return -x / (y * y); });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}
template <class T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) {
  return div(a, b);
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary<T>(
      "scale", x, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary<T>(
      "add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T{1}; });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T{-1});
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary<T>(
      "log", x, [](T v) { return std::log(v); },
      [](T v, T) { return T{1} / v; });
}

template <class T>
Tensor<T> sin(const Tensor<T>& x) {
  return detail::unary<T>(
      "sin", x, [](T v) { return std::sin(v); },
      [](T v, T) { return std::cos(v); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T{1} - y * y; });
}

template <class T>
T sigmoid_value(T v) {
  return v >= T{0} ? T{1} / (T{1} + std::exp(-v))
                   : std::exp(v) / (T{1} + std::exp(v));
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>(
      "sigmoid", x, [](T v) { return sigmoid_value(v); },
      [](T, T y) { return y * (T{1} - y); });
}

/// Subgradient at exactly 0 is 0.
template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T{0} ? v : T{0}; },
      [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::unary<T>(
      "silu", x, [](T v) { return v * sigmoid_value(v); },
      [](T v, T) {
        const T s = sigmoid_value(v);
        return s * (T{1} + v * (T{1} - s));
      },
      4);
}

enum class Activation { linear, relu, silu };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::silu: return "silu";
  }
  return "?";
}

template <class T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
  switch (kind) {
    case Activation::relu: return relu(x);
    case Activation::silu: return silu(x);
    case Activation::linear: break;
  }
  return x;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc{0};
  for (T v : x.data()) acc += v;
  detail::add_flops(x.numel());
  auto xi = x.impl();
  return detail::make_result<T>("sum", Shape{1}, {acc}, {&x},
                                [xi](std::span<const T> g) {
                                  if (!xi->requires_grad) return;
                                  for (T& v : detail::grad_buffer(*xi)) v += g[0];
                                });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

/// Sum over one axis, which is removed from the result.
template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("sum_axis: axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  std::vector<T> out(outer * inner, T{0});
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += xv[(o * n + a) * inner + i];
  detail::add_flops(x.numel());
  auto xi = x.impl();
  return detail::make_result<T>(
      "sum_axis", shape, std::move(out), {&x},
      [xi, outer, n, inner](std::span<const T> g) {
        if (!xi->requires_grad) return;
        auto gx = detail::grad_buffer(*xi);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t a = 0; a < n; ++a)
            for (std::size_t i = 0; i < inner; ++i)
              gx[(o * n + a) * inner + i] += g[o * inner + i];
      });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " +
                     to_string(shape));
  }
  auto xi = x.impl();
  return detail::make_result<T>("reshape", std::move(shape), x.to_vector(), {&x},
                                [xi](std::span<const T> g) {
                                  if (!xi->requires_grad) return;
                                  auto gx = detail::grad_buffer(*xi);
                                  for (std::size_t i = 0; i < gx.size(); ++i)
                                    gx[i] += g[i];
                                });
}

/// out.shape[i] = x.shape[perm[i]].
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) {
    throw ShapeError("permute: permutation of length " +
                     std::to_string(perm.size()) + " for shape " +
                     to_string(x.shape()));
  }
  std::vector<bool> seen(r, false);
  for (std::size_t p : perm) {
    if (p >= r || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(r);
  const Shape in_strides = x.strides();
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.dim(perm[i]);
    src_stride[i] = in_strides[perm[i]];
  }
  // Flat source index for every output element.
  auto map = std::make_shared<std::vector<std::size_t>>(x.numel());
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < map->size(); ++o) {
      (*map)[o] = src;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        src += src_stride[d];
        if (idx[d] < out_shape[d]) break;
        src -= src_stride[d] * idx[d];
        idx[d] = 0;
      }
    }
  }
  const auto xv = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xv[(*map)[o]];
  auto xi = x.impl();
  return detail::make_result<T>("permute", out_shape, std::move(out), {&x},
                                [xi, map](std::span<const T> g) {
                                  if (!xi->requires_grad) return;
                                  auto gx = detail::grad_buffer(*xi);
                                  for (std::size_t o = 0; o < g.size(); ++o)
                                    gx[(*map)[o]] += g[o];
                                });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: shape " + to_string(s) + " incompatible with " +
                       to_string(first) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t total = out_shape[axis];
  std::vector<T> out(numel_of(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t n = p.dim(axis);
    const auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.data() + o * n * inner, n * inner,
                  out.data() + (o * total + off) * inner);
    off += n;
  }
  std::vector<std::shared_ptr<TensorImpl<T>>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  Tensor<T> result(out_shape, std::move(out));
  bool needs = false;
  for (const auto& p : parts) needs = needs || p.requires_grad();
  if (grad_enabled() && needs) {
    result.set_requires_grad(true);
    Tape<T>::current().record(
        "concat", impls, result.impl(),
        [impls, offsets, outer, inner, total, axis](std::span<const T> g) {
          for (std::size_t k = 0; k < impls.size(); ++k) {
            auto& in = *impls[k];
            if (!in.requires_grad) continue;
            const std::size_t n = in.shape[axis];
            auto gx = detail::grad_buffer(in);
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < n * inner; ++i)
                gx[o * n * inner + i] += g[(o * total + offsets[k]) * inner + i];
          }
        });
  }
  return result;
}

/// (m x k) * (k x n).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: contraction mismatch " + to_string(a.shape()) +
                     " x " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  detail::gemm(false, false, m, n, k, a.data().data(), k, b.data().data(), n,
               out.data(), n, false);
  detail::add_flops(2 * m * n * k);
  auto ai = a.impl(), bi = b.impl();
  return detail::make_result<T>(
      "matmul", Shape{m, n}, std::move(out), {&a, &b},
      [ai, bi, m, n, k](std::span<const T> g) {
        if (ai->requires_grad)  // dA = G B^T
          detail::gemm(false, true, m, k, n, g.data(), n, bi->data.data(), n,
                       detail::grad_buffer(*ai).data(), k, true);
        if (bi->requires_grad)  // dB = A^T G
          detail::gemm(true, false, k, n, m, ai->data.data(), k, g.data(), n,
                       detail::grad_buffer(*bi).data(), n, true);
      });
}

/// x (m x in) times weight^T (weight is out x in), plus optional bias (out).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias = {}) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + to_string(x.shape()) +
                     " incompatible with weight " + to_string(weight.shape()));
  }
  const std::size_t m = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (bias.defined() && bias.numel() != out_dim) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) +
                     " does not match " + std::to_string(out_dim) + " outputs");
  }
  std::vector<T> out(m * out_dim);
  if (bias.defined()) {
    for (std::size_t i = 0; i < m; ++i)
      std::copy(bias.data().begin(), bias.data().end(),
                out.begin() + static_cast<std::ptrdiff_t>(i * out_dim));
  }
  detail::gemm(false, true, m, out_dim, in, x.data().data(), in,
               weight.data().data(), in, out.data(), out_dim, true);
  detail::add_flops(2 * m * out_dim * in + (bias.defined() ? m * out_dim : 0));
  auto xi = x.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return detail::make_result<T>(
      "linear", Shape{m, out_dim}, std::move(out), {&x, &weight, &bias},
      [xi, wi, bi, m, in, out_dim](std::span<const T> g) {
        if (xi->requires_grad)  // dX = G W
          detail::gemm(false, false, m, in, out_dim, g.data(), out_dim,
                       wi->data.data(), in, detail::grad_buffer(*xi).data(), in,
                       true);
        if (wi->requires_grad)  // dW = G^T X
          detail::gemm(true, false, out_dim, in, m, g.data(), out_dim,
                       xi->data.data(), in, detail::grad_buffer(*wi).data(), in,
                       true);
        if (bi && bi->requires_grad) {
          auto gb = detail::grad_buffer(*bi);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[i * out_dim + j];
        }
      });
}

}  // namespace ukan
