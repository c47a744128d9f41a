#pragma once

// Overlap metrics for binary masks and run aggregation.

#include <cmath>
#include <cstddef>
#include <iostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ukan/ops.hpp"

namespace ukan {

/// Foreground where sigmoid(logit) >= threshold (so logit 0 is foreground at
/// the default 0.5).
template <class T>
std::vector<std::uint8_t> binarize(std::span<const T> logits, double threshold = 0.5) {
  std::vector<std::uint8_t> mask(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    mask[i] = static_cast<double>(sigmoid_value(logits[i])) >= threshold ? 1 : 0;
  return mask;
}

struct OverlapCounts {
  std::size_t intersection = 0;
  std::size_t pred = 0;
  std::size_t truth = 0;
};

template <class A, class B>
OverlapCounts overlap_counts(std::span<const A> pred, std::span<const B> truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("metrics: mask sizes differ (" + std::to_string(pred.size()) +
                                " vs " + std::to_string(truth.size()) + ")");
  }
  OverlapCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = pred[i];
    const auto t = truth[i];
    if ((p != A{0} && p != A{1}) || (t != B{0} && t != B{1}))
      throw std::invalid_argument("metrics: masks must be binary");
    const bool pb = p == A{1}, tb = t == B{1};
    c.intersection += pb && tb;
    c.pred += pb;
    c.truth += tb;
  }
  return c;
}

/// |P n G| / |P u G|; 1 when both masks are empty.
inline double iou(const OverlapCounts& c) {
  const std::size_t uni = c.pred + c.truth - c.intersection;
  return uni == 0 ? 1.0 : static_cast<double>(c.intersection) / static_cast<double>(uni);
}

/// 2 |P n G| / (|P| + |G|); 1 when both masks are empty.
inline double f1(const OverlapCounts& c) {
  const std::size_t denom = c.pred + c.truth;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.intersection) / static_cast<double>(denom);
}

template <class A, class B>
double iou(std::span<const A> pred, std::span<const B> truth) {
  return iou(overlap_counts(pred, truth));
}

template <class A, class B>
double f1(std::span<const A> pred, std::span<const B> truth) {
  return f1(overlap_counts(pred, truth));
}

struct SegMetrics {
  std::vector<double> iou;  // per image
  std::vector<double> f1;
  double mean_iou = 0;
  double mean_f1 = 0;
};

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample standard deviation (n - 1)
  std::size_t n = 0;
};

/// Mean and sample standard deviation; a single run reports std 0.
inline MeanStd aggregate_runs(std::span<const double> values) {
  MeanStd r;
  r.n = values.size();
  if (values.empty()) return r;
  double s = 0;
  for (double v : values) s += v;
  r.mean = s / static_cast<double>(values.size());
  if (values.size() == 1) {
    std::cerr << "warning: aggregate_runs: one run, standard deviation reported as 0\n";
    return r;
  }
  double ss = 0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return r;
}

}  // namespace ukan
