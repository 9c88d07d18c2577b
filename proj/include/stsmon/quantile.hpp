#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "stsmon/error.hpp"

namespace stsmon {

// 1-based index of the q-quantile among n sorted values: ceil(q * n),
// i.e. the smallest order statistic whose empirical fraction is >= q.
// Products that land within rounding of an integer snap to it, so that
// 0.997 * 1000 selects index 997.
inline std::size_t quantile_rank(double q, std::size_t n) {
  if (n == 0) fail(ErrorCode::InsufficientData, "quantile of an empty sample");
  if (!(q > 0.0 && q <= 1.0)) fail(ErrorCode::InvalidArgument, "quantile level must lie in (0, 1]");
  const double x = q * static_cast<double>(n);
  const double nearest = std::round(x);
  const double k = std::abs(x - nearest) <= 1e-9 * std::max(1.0, x) ? nearest : std::ceil(x);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, n);
}

inline double quantile_sorted(std::span<const double> sorted, double q) {
  return sorted[quantile_rank(q, sorted.size()) - 1];
}

// Same convention on unsorted data; reorders `values`.
inline double quantile_select(std::vector<double>& values, double q) {
  const std::size_t k = quantile_rank(q, values.size()) - 1;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  return values[k];
}

}  // namespace stsmon
