#pragma once

// Uniform-knot B-spline bases evaluated with the Cox-de Boor recursion.

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "ukan/tensor.hpp"

namespace ukan {

struct SplineSpec {
  std::size_t grid_size = 5;  // G, number of intervals on [grid_min, grid_max]
  std::size_t order = 3;      // k, polynomial degree
  double grid_min = -1.0;
  double grid_max = 1.0;

  std::size_t num_basis() const { return grid_size + order; }
  std::size_t num_knots() const { return grid_size + 2 * order + 1; }
  double spacing() const { return (grid_max - grid_min) / static_cast<double>(grid_size); }

  void validate() const {
    if (grid_size == 0) throw std::invalid_argument("spline: grid_size must be positive");
    if (!(grid_min < grid_max))
      throw std::invalid_argument("spline: grid_min must be below grid_max");
  }

  /// The grid extended by `order` intervals on each side.
  std::vector<double> knots() const {
    std::vector<double> t(num_knots());
    const double h = spacing();
    for (std::size_t j = 0; j < t.size(); ++j)
      t[j] = grid_min + (static_cast<double>(j) - static_cast<double>(order)) * h;
    return t;
  }

  friend bool operator==(const SplineSpec&, const SplineSpec&) = default;
};

namespace detail {

// Evaluates all num_basis() degree-k bases at x into `out`, and, when
// `lower` is non-null, the degree-(k-1) bases (num_basis() + 1 values) used by
// the derivative. `scratch` must hold num_knots() - 1 values.
template <class T>
void eval_bspline(const SplineSpec& spec, const std::vector<double>& t, T x, T* out,
                  T* lower, T* scratch) {
  const std::size_t intervals = t.size() - 1;
  const std::size_t last_interior = spec.grid_size + spec.order - 1;
  for (std::size_t j = 0; j < intervals; ++j)
    scratch[j] = (x >= t[j] && x < t[j + 1]) ? T{1} : T{0};
  // Close the grid on the right so that x == grid_max still sums to one.
  if (static_cast<double>(x) == t[last_interior + 1]) {
    scratch[last_interior + 1] = T{0};
    scratch[last_interior] = T{1};
  }
  for (std::size_t d = 1; d <= spec.order; ++d) {
    if (d == spec.order && lower) {
      for (std::size_t i = 0; i < spec.num_basis() + 1; ++i) lower[i] = scratch[i];
    }
    for (std::size_t i = 0; i + d < intervals; ++i) {
      const T left = static_cast<T>((x - t[i]) / (t[i + d] - t[i]));
      const T right = static_cast<T>((t[i + d + 1] - x) / (t[i + d + 1] - t[i + 1]));
      scratch[i] = left * scratch[i] + right * scratch[i + 1];
    }
  }
  if (spec.order == 0 && lower) {
    for (std::size_t i = 0; i < spec.num_basis() + 1; ++i) lower[i] = T{0};
  }
  for (std::size_t i = 0; i < spec.num_basis(); ++i) out[i] = scratch[i];
}

}  // namespace detail

/// Basis values B_i(x) for every element of x; output shape x.shape + [G + k].
/// Inputs outside the extended knot span give all-zero bases.
template <class T>
Tensor<T> bspline_basis(const Tensor<T>& x, const SplineSpec& spec) {
  spec.validate();
  const std::size_t nb = spec.num_basis();
  const auto t = spec.knots();
  const auto xv = x.data();
  std::vector<T> out(xv.size() * nb);
  // On a uniform grid dB_{i,k}/dx = (B_{i,k-1} - B_{i+1,k-1}) / h.
  auto lower = std::make_shared<std::vector<T>>(
      grad_enabled() && x.requires_grad() ? xv.size() * (nb + 1) : 0);
  std::vector<T> scratch(t.size() - 1);
  for (std::size_t e = 0; e < xv.size(); ++e) {
    detail::eval_bspline(spec, t, xv[e], out.data() + e * nb,
                         lower->empty() ? nullptr : lower->data() + e * (nb + 1),
                         scratch.data());
  }
  // One indicator test per interval, then 6 flops per recursion entry.
  std::uint64_t per_element = t.size() - 1;
  for (std::size_t d = 1; d <= spec.order; ++d) per_element += 6 * (t.size() - 1 - d);
  detail::add_flops(per_element * xv.size());
  Shape shape = x.shape();
  shape.push_back(nb);
  auto xi = x.impl();
  const T factor = static_cast<T>(1.0 / spec.spacing());
  return detail::make_result<T>(
      "bspline_basis", std::move(shape), std::move(out), {&x},
      [xi, lower, nb, factor](std::span<const T> g) {
        if (!xi->requires_grad || lower->empty()) return;
        auto gx = detail::grad_buffer(*xi);
        for (std::size_t e = 0; e < gx.size(); ++e) {
          const T* lo = lower->data() + e * (nb + 1);
          const T* ge = g.data() + e * nb;
          T acc{0};
          for (std::size_t i = 0; i < nb; ++i) acc += ge[i] * factor * (lo[i] - lo[i + 1]);
          gx[e] += acc;
        }
      });
}

}  // namespace ukan
