#pragma once

// DDPM forward process, noise-prediction loss, and ancestral sampling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ukan/losses.hpp"
#include "ukan/module.hpp"
#include "ukan/tensor.hpp"

namespace ukan {

/// Timesteps are 1-based: t = 1..T.
struct NoiseSchedule {
  std::vector<double> betas, alphas, alpha_bars;  // index t - 1

  static NoiseSchedule linear(std::size_t steps = 1000, double beta_start = 1e-4,
                              double beta_end = 0.02) {
    if (steps == 0) throw std::invalid_argument("noise schedule: need at least one step");
    if (!(beta_start > 0 && beta_end < 1 && beta_start <= beta_end))
      throw std::invalid_argument("noise schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    double ab = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
      const double b = steps == 1 ? beta_start
                                  : beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                                     static_cast<double>(steps - 1);
      s.betas.push_back(b);
      s.alphas.push_back(1.0 - b);
      ab *= 1.0 - b;
      s.alpha_bars.push_back(ab);
    }
    return s;
  }

  std::size_t steps() const { return betas.size(); }

  void check(std::size_t t) const {
    if (t < 1 || t > steps()) {
      throw std::out_of_range("diffusion: timestep " + std::to_string(t) + " outside [1, " +
                              std::to_string(steps()) + "]");
    }
  }

  double beta(std::size_t t) const { check(t); return betas[t - 1]; }
  double alpha(std::size_t t) const { check(t); return alphas[t - 1]; }
  double alpha_bar(std::size_t t) const { check(t); return alpha_bars[t - 1]; }
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, with one timestep per batch
/// entry (dimension 0). Not differentiated.
template <class T>
Tensor<T> q_sample(const NoiseSchedule& s, const Tensor<T>& x0, const std::vector<std::size_t>& t,
                   const Tensor<T>& eps) {
  if (x0.shape() != eps.shape() || x0.rank() < 1 || t.size() != x0.dim(0)) {
    throw ShapeError("q_sample: x0 " + to_string(x0.shape()) + ", eps " + to_string(eps.shape()) +
                     ", " + std::to_string(t.size()) + " timesteps");
  }
  Tensor<T> out(x0.shape());
  const std::size_t per = x0.numel() / x0.dim(0);
  const auto a = x0.data();
  const auto e = eps.data();
  auto o = out.data();
  for (std::size_t b = 0; b < t.size(); ++b) {
    const double ab = s.alpha_bar(t[b]);
    const double ca = std::sqrt(ab), ce = std::sqrt(1.0 - ab);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i)
      o[i] = static_cast<T>(ca * static_cast<double>(a[i]) + ce * static_cast<double>(e[i]));
  }
  return out;
}

template <class T>
Tensor<T> standard_normal(Shape shape, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

/// Noise predictor: (x_t, timesteps) -> predicted eps with x_t's shape.
template <class T>
using NoisePredictor = std::function<Tensor<T>(const Tensor<T>&, const std::vector<std::size_t>&)>;

/// MSE between sampled eps and the prediction at x_t, t ~ Uniform{1..T}.
/// Draws all timesteps, then all noise, from `rng`.
template <class T>
Tensor<T> diffusion_loss(const NoiseSchedule& s, const NoisePredictor<T>& model, const Tensor<T>& x0,
                         Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(1, s.steps());
  std::vector<std::size_t> t(x0.dim(0));
  for (auto& v : t) v = pick(rng);
  auto eps = standard_normal<T>(x0.shape(), rng);
  auto xt = q_sample(s, x0, t, eps);
  return mse_loss(model(xt, t), eps);
}

struct SampleOptions {
  std::size_t batch_size = 8;
  bool clip = true;
  std::size_t first_index = 0;  // stream index of the first image
};

/// Ancestral DDPM sampling of n images of shape `image` (C, H, W):
///   x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t) + sqrt(beta_t) z,
/// z = 0 at t = 1. Image i draws its noise from its own stream
/// (seed, first_index + i), so results do not depend on the batch size.
template <class T>
std::vector<Tensor<T>> ddpm_sample(const NoiseSchedule& s, const NoisePredictor<T>& model,
                                   std::size_t n, const Shape& image, std::uint64_t seed,
                                   SampleOptions opt = {}) {
  if (image.size() != 3) throw ShapeError("ddpm_sample: image shape must be (C, H, W)");
  if (opt.batch_size == 0) throw std::invalid_argument("ddpm_sample: batch_size must be >= 1");
  NoGradGuard no_grad;
  const std::size_t per = numel_of(image);
  std::vector<Tensor<T>> out;
  for (std::size_t start = 0; start < n; start += opt.batch_size) {
    const std::size_t nb = std::min(opt.batch_size, n - start);
    std::vector<Rng> streams;
    for (std::size_t i = 0; i < nb; ++i) streams.push_back(make_rng(seed, opt.first_index + start + i));
    Shape shape{nb, image[0], image[1], image[2]};
    Tensor<T> x(shape);
    // One distribution per stream: normal_distribution caches a second draw.
    std::vector<std::normal_distribution<double>> normal(nb);
    for (std::size_t i = 0; i < nb; ++i)
      for (std::size_t j = 0; j < per; ++j)
        x.data()[i * per + j] = static_cast<T>(normal[i](streams[i]));
    for (std::size_t t = s.steps(); t >= 1; --t) {
      auto eps = model(x, std::vector<std::size_t>(nb, t));
      if (eps.shape() != x.shape()) {
        throw ShapeError("ddpm_sample: predictor returned " + to_string(eps.shape()) + " for " +
                         to_string(x.shape()));
      }
      const double beta = s.beta(t), alpha = s.alpha(t), ab = s.alpha_bar(t);
      const double c_eps = beta / std::sqrt(1.0 - ab);
      const double c_x = 1.0 / std::sqrt(alpha);
      const double sigma = std::sqrt(beta);
      Tensor<T> next(shape);
      auto xv = x.data();
      auto ev = eps.data();
      auto nv = next.data();
      for (std::size_t i = 0; i < nb; ++i)
        for (std::size_t j = 0; j < per; ++j) {
          const std::size_t k = i * per + j;
          double v = c_x * (static_cast<double>(xv[k]) - c_eps * static_cast<double>(ev[k]));
          if (t > 1) v += sigma * normal[i](streams[i]);
          nv[k] = static_cast<T>(v);
        }
      x = next;
    }
    for (std::size_t i = 0; i < nb; ++i) {
      Tensor<T> img({1, image[0], image[1], image[2]});
      for (std::size_t j = 0; j < per; ++j) {
        T v = x.data()[i * per + j];
        if (opt.clip) v = std::clamp(v, T{-1}, T{1});
        img.data()[j] = v;
      }
      out.push_back(img);
    }
  }
  return out;
}

}  // namespace ukan
