#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "epilnet/errors.hpp"

namespace epilnet {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t probes = 0;
  // Probes whose +/- perturbation flipped a ReLU mask (kink crossings).
  std::size_t skipped = 0;
  std::size_t worst_index = 0;
};

/// |a - n| / max(|a|, |n|); two values both below `floor` in magnitude compare
/// on absolute difference over `floor`.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

/// Central differences (f(x+eps) - f(x-eps)) / (2 eps) for every probed
/// element of `values`, compared against `analytic`. `loss` must recompute the
/// scalar objective from the current contents of `values`. When
/// `mask_signature` is set, probes whose two evaluations see different
/// signatures are not scored.
template <typename T>
GradCheckResult gradient_check(std::span<T> values, std::span<const T> analytic, const std::function<double()>& loss,
                               double eps = 1e-3, std::span<const std::size_t> indices = {},
                               const std::function<std::uint64_t()>& mask_signature = {}) {
  if (values.size() != analytic.size()) throw ShapeError("gradient_check analytic", values.size(), analytic.size());
  GradCheckResult result;
  auto probe = [&](std::size_t i) {
    const T original = values[i];
    values[i] = static_cast<T>(original + eps);
    const double plus = loss();
    const std::uint64_t sig_plus = mask_signature ? mask_signature() : 0;
    values[i] = static_cast<T>(original - eps);
    const double minus = loss();
    const std::uint64_t sig_minus = mask_signature ? mask_signature() : 0;
    values[i] = original;
    if (sig_plus != sig_minus) {
      ++result.skipped;
      return;
    }
    const double numeric = (plus - minus) / (2.0 * eps);
    const double err = relative_error(static_cast<double>(analytic[i]), numeric);
    ++result.probes;
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_index = i;
    }
  };
  if (indices.empty()) {
    for (std::size_t i = 0; i < values.size(); ++i) probe(i);
  } else {
    for (const std::size_t i : indices) probe(i);
  }
  return result;
}

}  // namespace epilnet
