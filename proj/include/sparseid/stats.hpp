#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "sparseid/common.hpp"

namespace sparseid {

enum class Alternative { Less, Greater };

inline const char* to_string(Alternative a) { return a == Alternative::Less ? "less" : "greater"; }

struct WelchTest {
  double t_stat = 0.0;
  double dof = 0.0;  // Welch-Satterthwaite
  double p_value = quiet_nan();
  Alternative direction = Alternative::Less;
  bool degenerate = false;  // zero pooled variance
};

namespace detail {

// Continued fraction for the regularized incomplete beta (Lentz's method).
inline double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 400;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericalFailure("beta_cf: continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0))
    throw std::invalid_argument("regularized_incomplete_beta: a, b must be > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
  return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

/// Student-t CDF with dof degrees of freedom.
inline double student_cdf(double t, double dof) {
  if (!(dof > 0.0)) throw std::invalid_argument("student_cdf: dof must be > 0");
  if (std::isinf(t)) return t > 0.0 ? 1.0 : 0.0;
  const double x = dof / (dof + t * t);
  const double tail = 0.5 * regularized_incomplete_beta(0.5 * dof, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

inline double sample_mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v, double mean) {
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / static_cast<double>(v.size() - 1);
}

/// Welch's unequal-variance t-test with a one-sided alternative about
/// mean(a) relative to mean(b).
inline WelchTest welch_one_sided(const std::vector<double>& a, const std::vector<double>& b,
                                 Alternative direction) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("welch_one_sided: both samples need size >= 2");
  for (const auto* s : {&a, &b})
    for (double x : *s)
      if (!std::isfinite(x)) throw std::invalid_argument("welch_one_sided: non-finite sample value");

  WelchTest w;
  w.direction = direction;
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ma = sample_mean(a);
  const double mb = sample_mean(b);
  const double va = sample_variance(a, ma);
  const double vb = sample_variance(b, mb);
  const double se2 = va / na + vb / nb;
  if (se2 <= 0.0) {
    w.degenerate = true;
    w.t_stat = 0.0;
    w.dof = na + nb - 2.0;
    w.p_value = quiet_nan();
    return w;
  }
  w.t_stat = (ma - mb) / std::sqrt(se2);
  const double num = se2 * se2;
  const double den = (va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0);
  w.dof = num / den;
  const double cdf = student_cdf(w.t_stat, w.dof);
  w.p_value = direction == Alternative::Less ? cdf : 1.0 - cdf;
  return w;
}

/// Linear-interpolation quantile (R type 7) of an unsorted sample.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) return quiet_nan();
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q must lie in [0,1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

namespace detail {

inline std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

struct SpearmanTest {
  double rho = 0.0;
  double p_value_greater = quiet_nan();  // one-sided, H1: positive association
};

/// Spearman rank correlation with average ranks for ties and a Student-t
/// approximation for the one-sided p-value.
inline SpearmanTest spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3)
    throw std::invalid_argument("spearman: need matched samples of size >= 3");
  const std::vector<double> rx = detail::average_ranks(x);
  const std::vector<double> ry = detail::average_ranks(y);
  const double mx = sample_mean(rx);
  const double my = sample_mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  SpearmanTest s;
  if (sxx <= 0.0 || syy <= 0.0) return s;  // constant input, rho = 0 by convention
  s.rho = sxy / std::sqrt(sxx * syy);
  const double m = static_cast<double>(rx.size());
  const double r2 = std::min(s.rho * s.rho, 1.0 - 1e-15);
  const double t = s.rho * std::sqrt((m - 2.0) / (1.0 - r2));
  s.p_value_greater = 1.0 - student_cdf(t, m - 2.0);
  return s;
}

}  // namespace sparseid
