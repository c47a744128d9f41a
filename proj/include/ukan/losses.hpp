#pragma once

// Training losses with fused forward/backward.

#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ukan/ops.hpp"

namespace ukan {

struct BceDiceWeights {
  double bce = 0.5;
  double dice = 1.0;
  double smooth = 1.0;
};

/// w_bce * BCE(sigmoid(logits), mask) + w_dice * (1 - mean_b Dice_b), where
/// the soft Dice is computed per sample over all of its elements:
///   Dice_b = (2 sum(p m) + s) / (sum(p) + sum(m) + s).
template <class T>
Tensor<T> bce_dice_loss(const Tensor<T>& logits, const Tensor<T>& mask,
                        BceDiceWeights w = {}) {
  if (logits.shape() != mask.shape() || logits.rank() < 1) {
    throw ShapeError("bce_dice_loss: logits " + to_string(logits.shape()) +
                     " vs mask " + to_string(mask.shape()));
  }
  for (T m : mask.data()) {
    if (m != T{0} && m != T{1}) {
      throw std::invalid_argument("bce_dice_loss: mask must be binary, found " +
                                  std::to_string(static_cast<double>(m)));
    }
  }
  const std::size_t batch = logits.dim(0);
  const std::size_t total = logits.numel();
  const std::size_t per = total / batch;
  const auto z = logits.data();
  const auto m = mask.data();
  auto prob = std::make_shared<std::vector<T>>(total);
  double bce = 0;
  auto inter = std::make_shared<std::vector<double>>(batch, 0.0);
  auto denom = std::make_shared<std::vector<double>>(batch, 0.0);
  double dice_sum = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    double i_sum = 0, p_sum = 0, m_sum = 0;
    for (std::size_t j = b * per; j < (b + 1) * per; ++j) {
      const double zj = z[j];
      bce += std::max(zj, 0.0) - zj * m[j] + std::log1p(std::exp(-std::abs(zj)));
      const T p = sigmoid_value(z[j]);
      (*prob)[j] = p;
      i_sum += p * m[j];
      p_sum += p;
      m_sum += m[j];
    }
    (*inter)[b] = i_sum;
    (*denom)[b] = p_sum + m_sum + w.smooth;
    dice_sum += (2 * i_sum + w.smooth) / (*denom)[b];
  }
  const double loss = w.bce * bce / static_cast<double>(total) +
                      w.dice * (1.0 - dice_sum / static_cast<double>(batch));
  detail::add_flops(12 * total);
  auto zi = logits.impl(), mi = mask.impl();
  return detail::make_result<T>(
      "bce_dice_loss", Shape{1}, {static_cast<T>(loss)}, {&logits},
      [zi, mi, prob, inter, denom, w, batch, per, total](std::span<const T> g) {
        if (!zi->requires_grad) return;
        auto gz = detail::grad_buffer(*zi);
        for (std::size_t b = 0; b < batch; ++b) {
          const double d = (*denom)[b];
          const double num = 2 * (*inter)[b] + w.smooth;
          for (std::size_t j = b * per; j < (b + 1) * per; ++j) {
            const double p = (*prob)[j];
            const double mj = mi->data[j];
            const double d_dice_dp = (2 * mj * d - num) / (d * d);
            const double grad = w.bce * (p - mj) / static_cast<double>(total) -
                                w.dice / static_cast<double>(batch) * d_dice_dp * p * (1 - p);
            gz[j] += static_cast<T>(g[0] * grad);
          }
        }
      });
}

/// Mean pixel-wise cross-entropy of softmax(logits) over the channel axis.
/// logits (B, C, H, W); labels (B, 1, H, W) holding class indices.
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& labels) {
  if (logits.rank() != 4 || labels.rank() != 4 || labels.dim(1) != 1 ||
      labels.dim(0) != logits.dim(0) || labels.dim(2) != logits.dim(2) ||
      labels.dim(3) != logits.dim(3)) {
    throw ShapeError("softmax_cross_entropy: logits " + to_string(logits.shape()) +
                     " vs labels " + to_string(labels.shape()));
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  const auto z = logits.data();
  const auto y = labels.data();
  auto soft = std::make_shared<std::vector<T>>(logits.numel());
  auto cls = std::make_shared<std::vector<std::size_t>>(n * hw);
  double loss = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      const double label = y[b * hw + i];
      if (label < 0 || label >= static_cast<double>(c) || label != std::floor(label)) {
        throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                    " outside [0, " + std::to_string(c) + ")");
      }
      const auto k = static_cast<std::size_t>(label);
      (*cls)[b * hw + i] = k;
      double mx = z[(b * c) * hw + i];
      for (std::size_t ch = 1; ch < c; ++ch) mx = std::max<double>(mx, z[(b * c + ch) * hw + i]);
      double s = 0;
      for (std::size_t ch = 0; ch < c; ++ch) s += std::exp(z[(b * c + ch) * hw + i] - mx);
      for (std::size_t ch = 0; ch < c; ++ch)
        (*soft)[(b * c + ch) * hw + i] =
            static_cast<T>(std::exp(z[(b * c + ch) * hw + i] - mx) / s);
      loss -= z[(b * c + k) * hw + i] - mx - std::log(s);
    }
  }
  const double count = static_cast<double>(n * hw);
  detail::add_flops(4 * logits.numel());
  auto zi = logits.impl();
  return detail::make_result<T>(
      "softmax_cross_entropy", Shape{1}, {static_cast<T>(loss / count)}, {&logits},
      [zi, soft, cls, n, c, hw, count](std::span<const T> g) {
        if (!zi->requires_grad) return;
        auto gz = detail::grad_buffer(*zi);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t k = (b * c + ch) * hw + i;
              const double onehot = (*cls)[b * hw + i] == ch ? 1.0 : 0.0;
              gz[k] += static_cast<T>(g[0] * ((*soft)[k] - onehot) / count);
            }
      });
}

/// mean((pred - target)^2).
template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: " + to_string(pred.shape()) + " vs " +
                     to_string(target.shape()));
  }
  const auto p = pred.data();
  const auto t = target.data();
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    acc += d * d;
  }
  const double n = static_cast<double>(p.size());
  detail::add_flops(3 * p.size());
  auto pi = pred.impl(), ti = target.impl();
  return detail::make_result<T>(
      "mse_loss", Shape{1}, {static_cast<T>(acc / n)}, {&pred, &target},
      [pi, ti, n](std::span<const T> g) {
        const T k = static_cast<T>(2.0 / n) * g[0];
        if (pi->requires_grad) {
          auto gp = detail::grad_buffer(*pi);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += k * (pi->data[i] - ti->data[i]);
        }
        if (ti->requires_grad) {
          auto gt = detail::grad_buffer(*ti);
          for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= k * (pi->data[i] - ti->data[i]);
        }
      });
}

}  // namespace ukan
