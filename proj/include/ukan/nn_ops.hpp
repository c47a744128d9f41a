#pragma once

// Convolution, pooling, resampling and normalization primitives on NCHW maps.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "ukan/detail/gemm.hpp"
#include "ukan/ops.hpp"
#include "ukan/tensor.hpp"

namespace ukan {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

namespace detail {

struct ConvGeometry {
  std::size_t batch, c_in, h, w;
  std::size_t c_out, kh, kw;
  std::size_t stride, pad, groups;
  std::size_t ho, wo;

  std::size_t cin_g() const { return c_in / groups; }
  std::size_t cout_g() const { return c_out / groups; }
  std::size_t positions() const { return ho * wo; }
  std::size_t patch() const { return cin_g() * kh * kw; }
  bool depthwise() const { return groups == c_in && groups == c_out; }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w,
                                  const Conv2dOptions& opt,
                                  std::string_view op) {
  if (x.size() != 4 || w.size() != 4) {
    throw ShapeError(std::string(op) + ": expected NCHW input and OIHW weight, got " +
                     to_string(x) + " and " + to_string(w));
  }
  ConvGeometry g{x[0], x[1], x[2], x[3], w[0], w[2], w[3],
                 opt.stride, opt.padding, opt.groups, 0, 0};
  if (g.groups == 0 || g.c_in % g.groups != 0 || g.c_out % g.groups != 0 ||
      w[1] != g.c_in / g.groups) {
    throw ShapeError(std::string(op) + ": groups=" + std::to_string(g.groups) +
                     " incompatible with input channels " + std::to_string(g.c_in) +
                     " and weight " + to_string(w));
  }
  if (g.stride == 0) throw ShapeError(std::string(op) + ": stride must be positive");
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw ShapeError(std::string(op) + ": input " + to_string(x) +
                     " smaller than kernel " + to_string(w) + " after padding " +
                     std::to_string(g.pad));
  }
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  return g;
}

// Columns for output positions [p0, p0 + np) of one image and one group,
// laid out patch x np.
template <class T>
void im2col(const ConvGeometry& g, const T* image, std::size_t group,
            std::size_t p0, std::size_t np, T* cols) {
  const std::size_t cin_g = g.cin_g();
  for (std::size_t c = 0; c < cin_g; ++c) {
    const T* plane = image + (group * cin_g + c) * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * np;
        for (std::size_t q = 0; q < np; ++q) {
          const std::size_t p = p0 + q;
          const std::size_t oy = p / g.wo, ox = p % g.wo;
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          row[q] = (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                    ix < static_cast<std::ptrdiff_t>(g.w))
                       ? plane[static_cast<std::size_t>(iy) * g.w +
                               static_cast<std::size_t>(ix)]
                       : T{0};
        }
      }
    }
  }
}

template <class T>
void col2im_add(const ConvGeometry& g, const T* cols, std::size_t group,
                std::size_t p0, std::size_t np, T* image_grad) {
  const std::size_t cin_g = g.cin_g();
  for (std::size_t c = 0; c < cin_g; ++c) {
    T* plane = image_grad + (group * cin_g + c) * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * np;
        for (std::size_t q = 0; q < np; ++q) {
          const std::size_t p = p0 + q;
          const std::size_t oy = p / g.wo, ox = p % g.wo;
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
              ix < static_cast<std::ptrdiff_t>(g.w))
            plane[static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)] +=
                row[q];
        }
      }
    }
  }
}

inline std::size_t conv_tile(const ConvGeometry& g) {
  constexpr std::size_t kBudget = 1 << 16;  // column buffer elements
  return std::clamp<std::size_t>(kBudget / std::max<std::size_t>(g.patch(), 1), 16,
                                 std::max<std::size_t>(g.positions(), 1));
}

template <class T>
void depthwise_forward(const ConvGeometry& g, const T* x, const T* w, T* out) {
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t c = 0; c < g.c_in; ++c) {
      const T* plane = x + (b * g.c_in + c) * g.h * g.w;
      const T* k = w + c * g.kh * g.kw;
      T* o = out + (b * g.c_out + c) * g.positions();
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        for (std::size_t ox = 0; ox < g.wo; ++ox) {
          T acc = o[oy * g.wo + ox];
          for (std::size_t i = 0; i < g.kh; ++i) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t j = 0; j < g.kw; ++j) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              acc += k[i * g.kw + j] *
                     plane[static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)];
            }
          }
          o[oy * g.wo + ox] = acc;
        }
      }
    }
  }
}

template <class T>
void depthwise_backward(const ConvGeometry& g, const T* x, const T* w,
                        const T* grad_out, T* gx, T* gw) {
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t c = 0; c < g.c_in; ++c) {
      const T* plane = x + (b * g.c_in + c) * g.h * g.w;
      const T* k = w + c * g.kh * g.kw;
      const T* go = grad_out + (b * g.c_out + c) * g.positions();
      T* gplane = gx ? gx + (b * g.c_in + c) * g.h * g.w : nullptr;
      T* gk = gw ? gw + c * g.kh * g.kw : nullptr;
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        for (std::size_t ox = 0; ox < g.wo; ++ox) {
          const T gv = go[oy * g.wo + ox];
          for (std::size_t i = 0; i < g.kh; ++i) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t j = 0; j < g.kw; ++j) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              const std::size_t src =
                  static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix);
              if (gk) gk[i * g.kw + j] += gv * plane[src];
              if (gplane) gplane[src] += gv * k[i * g.kw + j];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation, NCHW input, (C_out, C_in/groups, kh, kw) weight,
/// optional bias of length C_out.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, Conv2dOptions opt) {
  const auto g = detail::conv_geometry(x.shape(), weight.shape(), opt, "conv2d");
  if (bias.defined() && bias.numel() != g.c_out) {
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " for " +
                     std::to_string(g.c_out) + " output channels");
  }
  const std::size_t P = g.positions();
  std::vector<T> out(g.batch * g.c_out * P, T{0});
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t c = 0; c < g.c_out; ++c)
        std::fill_n(out.data() + (b * g.c_out + c) * P, P, bv[c]);
  }
  const T* xv = x.data().data();
  const T* wv = weight.data().data();
  if (g.depthwise()) {
    detail::depthwise_forward(g, xv, wv, out.data());
  } else {
    const std::size_t tile = detail::conv_tile(g);
    std::vector<T> cols(g.patch() * tile);
    for (std::size_t b = 0; b < g.batch; ++b) {
      const T* image = xv + b * g.c_in * g.h * g.w;
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        const T* wg = wv + grp * g.cout_g() * g.patch();
        T* og = out.data() + (b * g.c_out + grp * g.cout_g()) * P;
        for (std::size_t p0 = 0; p0 < P; p0 += tile) {
          const std::size_t np = std::min(tile, P - p0);
          detail::im2col(g, image, grp, p0, np, cols.data());
          detail::gemm(false, false, g.cout_g(), np, g.patch(), wg, g.patch(),
                       cols.data(), np, og + p0, P, true);
        }
      }
    }
  }
  detail::add_flops(2 * g.batch * g.c_out * P * g.patch() +
                    (bias.defined() ? g.batch * g.c_out * P : 0));
  auto xi = x.impl(), wi = weight.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  return detail::make_result<T>(
      "conv2d", Shape{g.batch, g.c_out, g.ho, g.wo}, std::move(out),
      {&x, &weight, &bias}, [g, xi, wi, bi](std::span<const T> go) {
        const std::size_t P = g.positions();
        if (bi && bi->requires_grad) {
          auto gb = detail::grad_buffer(*bi);
          for (std::size_t b = 0; b < g.batch; ++b)
            for (std::size_t c = 0; c < g.c_out; ++c) {
              const T* row = go.data() + (b * g.c_out + c) * P;
              T acc{0};
              for (std::size_t p = 0; p < P; ++p) acc += row[p];
              gb[c] += acc;
            }
        }
        T* gx = xi->requires_grad ? detail::grad_buffer(*xi).data() : nullptr;
        T* gw = wi->requires_grad ? detail::grad_buffer(*wi).data() : nullptr;
        if (!gx && !gw) return;
        if (g.depthwise()) {
          detail::depthwise_backward(g, xi->data.data(), wi->data.data(), go.data(),
                                     gx, gw);
          return;
        }
        const std::size_t tile = detail::conv_tile(g);
        std::vector<T> cols(g.patch() * tile);
        std::vector<T> dcols(gx ? g.patch() * tile : 0);
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* image = xi->data.data() + b * g.c_in * g.h * g.w;
          T* gimage = gx ? gx + b * g.c_in * g.h * g.w : nullptr;
          for (std::size_t grp = 0; grp < g.groups; ++grp) {
            const T* wg = wi->data.data() + grp * g.cout_g() * g.patch();
            T* gwg = gw ? gw + grp * g.cout_g() * g.patch() : nullptr;
            const T* gog = go.data() + (b * g.c_out + grp * g.cout_g()) * P;
            for (std::size_t p0 = 0; p0 < P; p0 += tile) {
              const std::size_t np = std::min(tile, P - p0);
              if (gwg) {
                detail::im2col(g, image, grp, p0, np, cols.data());
                detail::gemm(false, true, g.cout_g(), g.patch(), np, gog + p0, P,
                             cols.data(), np, gwg, g.patch(), true);
              }
              if (gimage) {
                detail::gemm(true, false, g.patch(), np, g.cout_g(), wg, g.patch(),
                             gog + p0, P, dcols.data(), np, false);
                detail::col2im_add(g, dcols.data(), grp, p0, np, gimage);
              }
            }
          }
        }
      });
}

/// Per-channel convolution: groups == channels.
template <class T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                           const Tensor<T>& bias, std::size_t padding = 1) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(0) != x.dim(1) ||
      weight.dim(1) != 1) {
    throw ShapeError("depthwise_conv2d: weight " + to_string(weight.shape()) +
                     " is not per-channel for input " + to_string(x.shape()));
  }
  return conv2d(x, weight, bias, Conv2dOptions{1, padding, x.dim(1)});
}

/// 2x2 max pooling, stride 2. Gradient goes to the first maximal element of
/// each window in row-major order.
template <class T>
Tensor<T> maxpool2x2(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw ShapeError("maxpool2x2: needs NCHW with even H and W, got " +
                     to_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / 2, wo = w / 2;
  std::vector<T> out(planes * ho * wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto xv = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = p * h * w + 2 * oy * w + 2 * ox;
        for (std::size_t cand : {best + 1, best + w, best + w + 1})
          if (xv[cand] > xv[best]) best = cand;
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = xv[best];
        (*argmax)[o] = best;
      }
    }
  }
  detail::add_flops(3 * out.size());
  auto xi = x.impl();
  return detail::make_result<T>(
      "maxpool2x2", Shape{x.dim(0), x.dim(1), ho, wo}, std::move(out), {&x},
      [xi, argmax](std::span<const T> g) {
        if (!xi->requires_grad) return;
        auto gx = detail::grad_buffer(*xi);
        for (std::size_t o = 0; o < g.size(); ++o) gx[(*argmax)[o]] += g[o];
      });
}

namespace detail {

// Half-pixel-centre linear interpolation taps (align_corners = false).
struct LinearTap {
  std::size_t i0, i1;
  double w0, w1;
};

inline std::vector<LinearTap> linear_taps(std::size_t in, std::size_t out) {
  std::vector<LinearTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double l = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - l, l};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize of each NCHW plane to (out_h, out_w), align_corners = false.
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 4 || x.dim(2) == 0 || x.dim(3) == 0) {
    throw ShapeError("resize_bilinear: needs non-empty NCHW, got " +
                     to_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  auto ty = std::make_shared<std::vector<detail::LinearTap>>(detail::linear_taps(h, out_h));
  auto tx = std::make_shared<std::vector<detail::LinearTap>>(detail::linear_taps(w, out_w));
  std::vector<T> out(planes * out_h * out_w);
  const auto xv = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv.data() + p * h * w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = (*ty)[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = (*tx)[ox];
        const double v = a.w0 * (b.w0 * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1]) +
                         a.w1 * (b.w0 * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1]);
        out[(p * out_h + oy) * out_w + ox] = static_cast<T>(v);
      }
    }
  }
  detail::add_flops(11 * out.size());
  auto xi = x.impl();
  return detail::make_result<T>(
      "resize_bilinear", Shape{x.dim(0), x.dim(1), out_h, out_w}, std::move(out),
      {&x}, [xi, ty, tx, planes, h, w, out_h, out_w](std::span<const T> g) {
        if (!xi->requires_grad) return;
        auto gx = detail::grad_buffer(*xi);
        for (std::size_t p = 0; p < planes; ++p) {
          T* dst = gx.data() + p * h * w;
          for (std::size_t oy = 0; oy < out_h; ++oy) {
            const auto& a = (*ty)[oy];
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const auto& b = (*tx)[ox];
              const double gv = g[(p * out_h + oy) * out_w + ox];
              dst[a.i0 * w + b.i0] += static_cast<T>(gv * a.w0 * b.w0);
              dst[a.i0 * w + b.i1] += static_cast<T>(gv * a.w0 * b.w1);
              dst[a.i1 * w + b.i0] += static_cast<T>(gv * a.w1 * b.w0);
              dst[a.i1 * w + b.i1] += static_cast<T>(gv * a.w1 * b.w1);
            }
          }
        }
      });
}

template <class T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
  if (x.rank() != 4) {
    throw ShapeError("upsample_bilinear2x: needs NCHW, got " + to_string(x.shape()));
  }
  return resize_bilinear(x, 2 * x.dim(2), 2 * x.dim(3));
}

/// Batch normalization over (N, H, W) per channel. In training mode the batch
/// statistics are used and the running estimates updated in place
/// (running_var tracks the unbiased variance).
template <class T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, Tensor<T>& running_mean,
                       Tensor<T>& running_var, bool training, T momentum, T eps) {
  if (x.rank() != 4) {
    throw ShapeError("batch_norm2d: needs NCHW, got " + to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (const Tensor<T>* p : {&gamma, &beta, static_cast<const Tensor<T>*>(&running_mean),
                             static_cast<const Tensor<T>*>(&running_var)}) {
    if (p->numel() != c) {
      throw ShapeError("batch_norm2d: per-channel parameter " + to_string(p->shape()) +
                       " for " + std::to_string(c) + " channels");
    }
  }
  if (training && n < 2) {
    throw ShapeError("batch_norm2d: training mode needs a batch of at least 2, got " +
                     std::to_string(n));
  }
  const std::size_t count = n * hw;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(c);
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  auto rm = running_mean.data();
  auto rv = running_var.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (training) {
      double s = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) s += xv[(b * c + ch) * hw + i];
      const double m = s / static_cast<double>(count);
      double ss = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = xv[(b * c + ch) * hw + i] - m;
          ss += d * d;
        }
      mu = static_cast<T>(m);
      var = static_cast<T>(ss / static_cast<double>(count));
      rm[ch] = (T{1} - momentum) * rm[ch] + momentum * mu;
      rv[ch] = (T{1} - momentum) * rv[ch] +
               momentum * static_cast<T>(ss / static_cast<double>(count - 1));
    } else {
      mu = rm[ch];
      var = rv[ch];
    }
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[ch] = is;
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t k = (b * c + ch) * hw + i;
        const T h = (xv[k] - mu) * is;
        (*xhat)[k] = h;
        out[k] = gv[ch] * h + bv[ch];
      }
    }
  }
  detail::add_flops(5 * x.numel());
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return detail::make_result<T>(
      "batch_norm2d", x.shape(), std::move(out), {&x, &gamma, &beta},
      [xi, gi, bi, xhat, inv_std, n, c, hw, training](std::span<const T> g) {
        const std::size_t count = n * hw;
        T* gx = xi->requires_grad ? detail::grad_buffer(*xi).data() : nullptr;
        T* gg = gi->requires_grad ? detail::grad_buffer(*gi).data() : nullptr;
        T* gb = bi->requires_grad ? detail::grad_buffer(*bi).data() : nullptr;
        for (std::size_t ch = 0; ch < c; ++ch) {
          T sum_g{0}, sum_gx{0};
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t k = (b * c + ch) * hw + i;
              sum_g += g[k];
              sum_gx += g[k] * (*xhat)[k];
            }
          if (gg) gg[ch] += sum_gx;
          if (gb) gb[ch] += sum_g;
          if (!gx) continue;
          const T gamma_c = gi->data[ch];
          const T is = (*inv_std)[ch];
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t k = (b * c + ch) * hw + i;
              if (training) {
                gx[k] += gamma_c * is *
                         (g[k] - sum_g / static_cast<T>(count) -
                          (*xhat)[k] * sum_gx / static_cast<T>(count));
              } else {
                gx[k] += gamma_c * is * g[k];
              }
            }
        }
      });
}

/// Normalizes over the last axis, then applies per-feature gamma and beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: feature size " + std::to_string(d) +
                     " does not match gamma " + to_string(gamma.shape()) +
                     " / beta " + to_string(beta.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    double s = 0;
    for (std::size_t i = 0; i < d; ++i) s += row[i];
    const double m = s / static_cast<double>(d);
    double ss = 0;
    for (std::size_t i = 0; i < d; ++i) ss += (row[i] - m) * (row[i] - m);
    const T is = static_cast<T>(1.0 / std::sqrt(ss / static_cast<double>(d) + eps));
    (*inv_std)[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (row[i] - static_cast<T>(m)) * is;
      (*xhat)[r * d + i] = h;
      out[r * d + i] = gv[i] * h + bv[i];
    }
  }
  detail::add_flops(5 * x.numel());
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return detail::make_result<T>(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [xi, gi, bi, xhat, inv_std, rows, d](std::span<const T> g) {
        T* gx = xi->requires_grad ? detail::grad_buffer(*xi).data() : nullptr;
        T* gg = gi->requires_grad ? detail::grad_buffer(*gi).data() : nullptr;
        T* gb = bi->requires_grad ? detail::grad_buffer(*bi).data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * d;
          const T* hr = xhat->data() + r * d;
          T sum_dh{0}, sum_dh_h{0};
          for (std::size_t i = 0; i < d; ++i) {
            const T dh = gr[i] * gi->data[i];
            sum_dh += dh;
            sum_dh_h += dh * hr[i];
            if (gg) gg[i] += gr[i] * hr[i];
            if (gb) gb[i] += gr[i];
          }
          if (!gx) continue;
          const T is = (*inv_std)[r];
          const T inv_d = T{1} / static_cast<T>(d);
          for (std::size_t i = 0; i < d; ++i) {
            const T dh = gr[i] * gi->data[i];
            gx[r * d + i] += is * (dh - inv_d * sum_dh - hr[i] * inv_d * sum_dh_h);
          }
        }
      });
}

}  // namespace ukan
