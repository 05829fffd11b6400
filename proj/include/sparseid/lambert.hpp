#pragma once

#include <cmath>
#include <stdexcept>

#include "sparseid/common.hpp"

namespace sparseid {

/// Principal branch W0 of the Lambert function: w with w*exp(w) = z, z >= -1/e.
/// Halley iteration from a regime-dependent initial guess; residual below
/// 1e-14 * max(1,|z|) across the supported range.
inline double lambert_w0(double z) {
  constexpr double kInvE = 0.36787944117144232160;  // 1/e
  if (std::isnan(z)) throw std::invalid_argument("lambert_w0: NaN argument");
  if (z < -kInvE - 1e-12) throw std::domain_error("lambert_w0: argument below -1/e");
  if (z <= -kInvE) return -1.0;
  if (z == 0.0) return 0.0;

  double w;
  const double branch = 2.0 * (std::exp(1.0) * z + 1.0);
  if (branch < 1.0) {
    // Series around the branch point z = -1/e.
    const double p = std::sqrt(branch);
    w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p;
  } else if (z < 3.0) {
    w = z / (1.0 + z);  // crude but inside Halley's basin
  } else {
    const double l1 = std::log(z);
    const double l2 = std::log(l1);
    w = l1 - l2 + l2 / l1;
  }

  for (int it = 0; it < 64; ++it) {
    const double ew = std::exp(w);
    const double f = w * ew - z;
    const double wp1 = w + 1.0;
    const double denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
    const double step = f / denom;
    w -= step;
    if (std::abs(step) <= 1e-16 * (1.0 + std::abs(w))) break;
  }
  return w;
}

}  // namespace sparseid
