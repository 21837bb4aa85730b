#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "agsv/errors.hpp"

namespace agsv::detail {

/// Unit-normalized copy of a query. Throws ShapeError on a dimension
/// mismatch, InputError on non-finite values, NormalizationError on zero.
inline std::vector<double> unit_query(std::span<const double> query, int dim) {
  if (static_cast<int>(query.size()) != dim)
    throw ShapeError("query has dimension " + std::to_string(query.size()) + ", store has " +
                     std::to_string(dim));
  double sq = 0.0;
  for (double v : query) {
    if (!std::isfinite(v)) throw InputError("query holds non-finite values");
    sq += v * v;
  }
  if (sq == 0.0) throw NormalizationError(0);
  const double norm = std::sqrt(sq);
  std::vector<double> out(query.begin(), query.end());
  for (double& v : out) v /= norm;
  return out;
}

/// Dot product in double against a stored float row, clamped to [-1, 1].
inline double cosine(const std::vector<double>& unit, const float* row) {
  double s = 0.0;
  for (std::size_t d = 0; d < unit.size(); ++d) s += unit[d] * static_cast<double>(row[d]);
  return std::clamp(s, -1.0, 1.0);
}

}  // namespace agsv::detail
