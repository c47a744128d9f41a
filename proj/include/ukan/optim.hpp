#pragma once

// Adam and the cosine learning-rate schedule.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "ukan/module.hpp"
#include "ukan/tensor.hpp"

namespace ukan {

/// lr_min + (lr - lr_min) (1 + cos(pi e / total)) / 2.
inline double cosine_lr(std::size_t epoch, std::size_t total, double lr, double lr_min) {
  if (total == 0) return lr;
  const double frac = static_cast<double>(std::min(epoch, total)) / static_cast<double>(total);
  return lr_min + 0.5 * (lr - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
class Adam {
 public:
  Adam() = default;

  /// Keeps the trainable entries of `params`; buffers are ignored.
  Adam(const ParamList<T>& params, AdamOptions opt) : opt_(opt) {
    for (const auto& p : params) {
      if (!p.trainable) continue;
      names_.push_back(p.name);
      params_.push_back(p.tensor);
      m_.push_back(Tensor<T>(p.tensor.shape()));
      v_.push_back(Tensor<T>(p.tensor.shape()));
    }
  }

  const AdamOptions& options() const { return opt_; }
  std::uint64_t steps() const { return step_; }
  void set_steps(std::uint64_t s) { step_ = s; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

  /// Applies one update from the accumulated gradients. Throws NonFiniteError
  /// before touching anything if a gradient holds NaN or Inf.
  void step(double lr) {
    if (!(lr > 0)) throw std::invalid_argument("adam: learning rate must be positive");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      const auto g = params_[i].grad();
      for (std::size_t j = 0; j < g.size(); ++j) {
        if (!std::isfinite(static_cast<double>(g[j]))) {
          throw NonFiniteError("adam: non-finite gradient in '" + names_[i] + "' at element " +
                               std::to_string(j) + " (step " + std::to_string(step_ + 1) + ")");
        }
      }
    }
    ++step_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      const auto g = params_[i].grad();
      auto p = params_[i].data();
      auto m = m_[i].data();
      auto v = v_[i].data();
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g[j];
        const double mj = opt_.beta1 * m[j] + (1 - opt_.beta1) * gj;
        const double vj = opt_.beta2 * v[j] + (1 - opt_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        p[j] = static_cast<T>(p[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + opt_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  AdamOptions opt_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> params_, m_, v_;
  std::uint64_t step_ = 0;
};

}  // namespace ukan
