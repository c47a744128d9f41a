#pragma once

// Central-difference gradient checking against the tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "ukan/tensor.hpp"

namespace ukan {

struct GradCheckEntry {
  std::size_t tensor = 0;  // index into the checked tensor list
  std::size_t element = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
  double step = 0;  // finite-difference step that produced `numeric`
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0;
  double tolerance = 0;
  bool passed = true;

  std::size_t failures() const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [this](const auto& e) {
          return !(e.rel_error <= tolerance);
        }));
  }
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are
/// analytically zero from turning finite-difference round-off into a failure.
inline double gradient_rel_error(double analytic, double numeric,
                                 double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Checks d loss / d tensors[t][e] for every (t, e) in `probes`. `loss` must
/// rebuild the graph from the current tensor contents on each call. Clears the
/// tape before and after.
///
/// A probe that fails at step h is retried at h/10 and h/100: in networks
/// with ReLU or max-pooling a central difference whose interval straddles a
/// kink is wrong while the analytic gradient is right. A wrong analytic
/// gradient does not converge under a smaller step, so retries cannot mask it.
template <class T>
GradCheckReport grad_check_probes(
    const std::function<Tensor<T>()>& loss, std::vector<Tensor<T>> tensors,
    const std::vector<std::pair<std::size_t, std::size_t>>& probes,
    double h = 1e-5, double tol = 1e-4) {
  clear_tape<T>();
  std::vector<bool> previous;
  for (auto& t : tensors) {
    previous.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    auto l = loss();
    backward(l);
  }
  std::vector<std::vector<T>> analytic;
  for (auto& t : tensors) {
    analytic.push_back(t.has_grad() ? std::vector<T>(t.grad().begin(), t.grad().end())
                                    : std::vector<T>(t.numel(), T{0}));
    t.zero_grad();
  }
  clear_tape<T>();

  GradCheckReport report;
  report.tolerance = tol;
  {
    NoGradGuard no_grad;
    for (auto [ti, ei] : probes) {
      auto values = tensors.at(ti).data();
      const T saved = values[ei];
      GradCheckEntry e;
      e.tensor = ti;
      e.element = ei;
      e.analytic = static_cast<double>(analytic[ti][ei]);
      e.rel_error = INFINITY;
      double step = h;
      for (int attempt = 0; attempt < 3 && !(e.rel_error <= tol); ++attempt, step /= 10) {
        values[ei] = saved + static_cast<T>(step);
        const double plus = static_cast<double>(loss().item());
        values[ei] = saved - static_cast<T>(step);
        const double minus = static_cast<double>(loss().item());
        values[ei] = saved;
        const double numeric = (plus - minus) / (2 * step);
        const double err = gradient_rel_error(e.analytic, numeric);
        if (attempt == 0 || err < e.rel_error) {
          e.numeric = numeric;
          e.rel_error = err;
          e.step = step;
        }
      }
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      if (!(e.rel_error <= tol)) report.passed = false;
      report.entries.push_back(e);
    }
  }
  for (std::size_t i = 0; i < tensors.size(); ++i)
    tensors[i].set_requires_grad(previous[i]);
  return report;
}

/// Checks every element of x for f: Tensor -> scalar.
template <class T, class F>
GradCheckReport grad_check(F&& f, Tensor<T> x, double h = 1e-5,
                           double tol = 1e-4) {
  std::vector<std::pair<std::size_t, std::size_t>> probes;
  for (std::size_t i = 0; i < x.numel(); ++i) probes.emplace_back(0, i);
  std::function<Tensor<T>()> loss = [&f, x] { return f(x); };
  return grad_check_probes<T>(loss, {x}, probes, h, tol);
}

}  // namespace ukan
