// Test-only oracles, independent of the library implementations they check.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

namespace oracles {

/// Exhaustive maximum bipartite matching by recursion over rows. O(n!) - small n only.
inline int brute_force_matching(const std::vector<std::vector<bool>>& nonzero) {
  const int n = static_cast<int>(nonzero.size());
  std::vector<bool> used(n, false);
  std::function<int(int)> go = [&](int row) -> int {
    if (row == n) return 0;
    int best = go(row + 1);  // leave this row unmatched
    for (int c = 0; c < n; ++c) {
      if (!nonzero[row][c] || used[c]) continue;
      used[c] = true;
      best = std::max(best, 1 + go(row + 1));
      used[c] = false;
    }
    return best;
  };
  return go(0);
}

/// Hall deficiency max_S (|S| - |N(S)|) by subset enumeration. Small n only.
inline int brute_force_deficiency(const std::vector<std::vector<bool>>& nonzero) {
  const int n = static_cast<int>(nonzero.size());
  int best = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    int size = 0;
    unsigned neigh = 0;
    for (int r = 0; r < n; ++r) {
      if (!(mask >> r & 1u)) continue;
      ++size;
      for (int c = 0; c < n; ++c)
        if (nonzero[r][c]) neigh |= 1u << c;
    }
    best = std::max(best, size - __builtin_popcount(neigh));
  }
  return best;
}

/// Lambert W0 by the derivative-free fixed point w <- (w^2 + z e^{-w}) / (w + 1).
inline double lambert_fixed_point(double z, int iters = 200) {
  double w = z >= 0.0 ? std::log1p(z) : z;
  for (int i = 0; i < iters; ++i) w = (w * w + z * std::exp(-w)) / (w + 1.0);
  return w;
}

/// Student-t CDF by adaptive Simpson quadrature of the density (normalized via
/// lgamma), independent of the incomplete-beta route.
inline double student_cdf_quadrature(double t, double dof) {
  const double log_norm =
      std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) - 0.5 * std::log(dof * M_PI);
  const auto pdf = [&](double x) {
    return std::exp(log_norm - 0.5 * (dof + 1.0) * std::log1p(x * x / dof));
  };
  std::function<double(double, double, double, double, double, double, int)> simpson =
      [&](double lo, double hi, double flo, double fmid, double fhi, double tol,
          int depth) -> double {
    const double mid = 0.5 * (lo + hi);
    const double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
    const double flm = pdf(lm), frm = pdf(rm);
    const double whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
    const double left = (hi - lo) / 12.0 * (flo + 4.0 * flm + fmid);
    const double right = (hi - lo) / 12.0 * (fmid + 4.0 * frm + fhi);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return simpson(lo, mid, flo, flm, fmid, 0.5 * tol, depth - 1) +
           simpson(mid, hi, fmid, frm, fhi, 0.5 * tol, depth - 1);
  };
  // Integrate the upper tail from |t|. Heavy tails are handled with the
  // substitution x = 1/u, which maps [b, inf) to a finite interval.
  const auto tail_from = [&](double b) {
    double tail = 0.0;
    if (b < 1.0) {
      tail += simpson(b, 1.0, pdf(b), pdf(0.5 * (b + 1.0)), pdf(1.0), 1e-15, 60);
      b = 1.0;
    }
    const auto g = [&](double u) { return u <= 0.0 ? 0.0 : pdf(1.0 / u) / (u * u); };
    std::function<double(double, double, double, double, double, double, int)> simpson_g =
        [&](double lo, double hi, double flo, double fmid, double fhi, double tol,
            int depth) -> double {
      const double mid = 0.5 * (lo + hi);
      const double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
      const double flm = g(lm), frm = g(rm);
      const double whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
      const double left = (hi - lo) / 12.0 * (flo + 4.0 * flm + fmid);
      const double right = (hi - lo) / 12.0 * (fmid + 4.0 * frm + fhi);
      const double delta = left + right - whole;
      if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
      return simpson_g(lo, mid, flo, flm, fmid, 0.5 * tol, depth - 1) +
             simpson_g(mid, hi, fmid, frm, fhi, 0.5 * tol, depth - 1);
    };
    tail += simpson_g(0.0, 1.0 / b, g(0.0), g(0.5 / b), g(1.0 / b), 1e-15, 60);
    return tail;
  };
  const double a = std::abs(t);
  const double tail = tail_from(a);
  return t >= 0.0 ? 1.0 - tail : tail;
}

/// Gram matrix of exponential coordinates x_i(t) = e^{lambda_i t} on [0, T].
inline Eigen::MatrixXd exponential_gram(const Eigen::VectorXd& lambdas, double T) {
  const int n = static_cast<int>(lambdas.size());
  Eigen::MatrixXd g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double s = lambdas(i) + lambdas(j);
      g(i, j) = std::abs(s) < 1e-14 ? T : (std::exp(s * T) - 1.0) / s;
    }
  return g;
}

}  // namespace oracles
