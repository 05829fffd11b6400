#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>

#include "sparseid/common.hpp"
#include "sparseid/integrator.hpp"
#include "sparseid/lambert.hpp"
#include "sparseid/rng.hpp"

namespace sparseid {

inline constexpr double kScnCap = 1e15;  // condition numbers beyond this are reported as +inf

struct KernelDistance {
  double d = 0.0;      // normalized distance of x0 to ker(A), in [0,1]
  int kernel_dim = 0;  // d0
};

struct TrajMetricReport {
  double d_a0 = 0.0;
  int kernel_dim = 0;
  double scn = 1.0;         // +inf once past the double-precision cap
  double log10_cond = 0.0;  // uncapped log10 of the Gram condition number
  Eigen::MatrixXd gram;
};

struct DivergenceBound {
  double c_integral = quiet_nan();  // C(t,A,A') = int_0^t ||e^{A(t-s)}|| ||e^{A's}|| ds
  double bound = quiet_nan();       // C * ||A-A'||_2 * dist(x0, V*)
  double horizon_t = quiet_nan();   // certified epsilon-horizon (+inf when never reached)
  double alpha = quiet_nan();       // fitted growth exponent
  double m_const = quiet_nan();     // fitted envelope constant, >= 1
  double epsilon = quiet_nan();
};

namespace detail {

/// Orthonormal kernel basis of A: right singular vectors with sigma < tol.
/// Returns an n x d0 matrix (d0 possibly 0).
inline Eigen::MatrixXd kernel_basis(const Eigen::MatrixXd& a, double tol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const int n = static_cast<int>(a.cols());
  int rank = 0;
  while (rank < n && s(rank) >= tol) ++rank;
  return svd.matrixV().rightCols(n - rank);
}

inline double spectral_norm(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

// Adaptive Simpson on [lo, hi] with absolute tolerance tol.
template <typename F>
double adaptive_simpson(const F& f, double lo, double hi, double f_lo, double f_mid, double f_hi,
                        double tol, int depth) {
  const double mid = 0.5 * (lo + hi);
  const double lmid = 0.5 * (lo + mid);
  const double rmid = 0.5 * (mid + hi);
  const double f_lmid = f(lmid);
  const double f_rmid = f(rmid);
  const double h = hi - lo;
  const double whole = h / 6.0 * (f_lo + 4.0 * f_mid + f_hi);
  const double left = h / 12.0 * (f_lo + 4.0 * f_lmid + f_mid);
  const double right = h / 12.0 * (f_mid + 4.0 * f_rmid + f_hi);
  const double delta = left + right - whole;
  if (depth <= 0) throw NumericalFailure("adaptive quadrature: recursion limit reached");
  if (std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_simpson(f, lo, mid, f_lo, f_lmid, f_mid, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, mid, hi, f_mid, f_rmid, f_hi, 0.5 * tol, depth - 1);
}

template <typename F>
double integrate(const F& f, double lo, double hi, double tol) {
  if (hi <= lo) return 0.0;
  const double f_lo = f(lo);
  const double f_mid = f(0.5 * (lo + hi));
  const double f_hi = f(hi);
  return adaptive_simpson(f, lo, hi, f_lo, f_mid, f_hi, tol, 48);
}

}  // namespace detail

/// Normalized distance of x0 to ker(A) together with the kernel dimension.
/// d = 1 when A is invertible (kernel {0}), d = 0 when x0 lies in the kernel.
inline KernelDistance kernel_distance(const Eigen::MatrixXd& a, const Eigen::VectorXd& x0,
                                      double tol = kDefaultSvdTol) {
  const double norm = x0.norm();
  if (norm <= 0.0) throw std::invalid_argument("kernel_distance: x0 must be nonzero");
  const Eigen::MatrixXd basis = detail::kernel_basis(a, tol);
  const int d0 = static_cast<int>(basis.cols());
  if (d0 == 0) return {1.0, 0};
  const Eigen::VectorXd projected = basis * (basis.transpose() * x0);
  const double d = (x0 - projected).norm() / norm;
  return {std::clamp(d, 0.0, 1.0), d0};
}

/// Trajectory Gram matrix Sigma_xx by trapezoidal quadrature and its condition
/// number (the smoothed condition number). The Gram's singular values are the
/// squared singular values of sqrt(W) * states, which stay accurate far below
/// the roundoff floor of the formed product. Values beyond 1e15, or with a
/// smallest singular value under eps * largest, are reported as +inf; the
/// uncapped log10 of the ratio is kept alongside.
inline TrajMetricReport smoothed_condition_number(const Trajectory& traj) {
  const int k = traj.samples();
  const int n = traj.dim();
  if (k < 2) throw std::invalid_argument("smoothed_condition_number: need at least 2 samples");

  Eigen::VectorXd w(k);
  w.setOnes();
  w(0) = 0.5;
  w(k - 1) = 0.5;
  const double h = (traj.times(k - 1) - traj.times(0)) / static_cast<double>(k - 1);
  w *= h;

  TrajMetricReport r;
  r.gram = traj.states.transpose() * w.asDiagonal() * traj.states;
  // Symmetrize away the last-bit asymmetry of the product.
  r.gram = 0.5 * (r.gram + r.gram.transpose()).eval();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(w.cwiseSqrt().asDiagonal() * traj.states);
  const auto& s = svd.singularValues();
  const double largest = s(0) * s(0);
  const double smallest = s(n - 1) * s(n - 1);
  if (largest <= 0.0 || smallest <= 0.0) {
    r.scn = infinity();
    r.log10_cond = 300.0;  // exact degeneracy
  } else {
    r.log10_cond = std::log10(largest) - std::log10(smallest);
    if (smallest < std::numeric_limits<double>::epsilon() * largest) {
      r.scn = infinity();
    } else {
      const double cond = largest / smallest;
      r.scn = cond > kScnCap ? infinity() : cond;
    }
  }
  return r;
}

/// Rank-one confusable perturbation A' = A + u v^T with v a unit vector in the
/// orthogonal complement of ker(A) and u a unit Gaussian direction, so that
/// (A - A') annihilates the kernel and ||A - A'||_2 = 1. Returns nothing when
/// the kernel is trivial or all of R^n (no valid v exists).
inline std::optional<Eigen::MatrixXd> confusable_system(const Eigen::MatrixXd& a,
                                                        double tol = kDefaultSvdTol,
                                                        std::uint64_t seed = 0) {
  const int n = static_cast<int>(a.rows());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  int rank = 0;
  while (rank < n && s(rank) >= tol) ++rank;
  const int d0 = n - rank;
  if (d0 == 0 || rank == 0) return std::nullopt;

  const Eigen::VectorXd v = svd.matrixV().col(0);  // leading right singular vector, in ker(A)^perp
  CounterRng rng(derive_key({seed, 0x77}));
  Eigen::VectorXd u(n);
  double norm = 0.0;
  do {
    for (int i = 0; i < n; ++i) u(i) = rng.gaussian();
    norm = u.norm();
  } while (norm < 1e-12);
  u /= norm;
  return a + u * v.transpose();
}

/// Trajectory divergence bound: C(t,A,A') * ||A-A'||_2 * dist(x0, ker A),
/// with C computed by adaptive quadrature of the exponential norms. The
/// unnormalized distance is used so the bound dominates the measured
/// divergence for any scaling of x0; on unit-norm x0 it equals d_{A,0}.
inline DivergenceBound divergence_bound(const Eigen::MatrixXd& a, const Eigen::MatrixXd& a_prime,
                                        const Eigen::VectorXd& x0, double t,
                                        double tol = kDefaultSvdTol) {
  if (t < 0.0) throw std::invalid_argument("divergence_bound: t must be >= 0");
  DivergenceBound out;
  if (t == 0.0) {
    out.c_integral = 0.0;
    out.bound = 0.0;
    return out;
  }
  const auto integrand = [&](double s) {
    return matrix_exp_norm(a, t - s) * matrix_exp_norm(a_prime, s);
  };
  out.c_integral = detail::integrate(integrand, 0.0, t, 1e-10 * t);
  const double delta_norm = detail::spectral_norm(a - a_prime);
  const KernelDistance kd = kernel_distance(a, x0, tol);
  out.bound = out.c_integral * delta_norm * kd.d * x0.norm();
  return out;
}

struct HorizonConfig {
  double t_max = 2.0;   // window on which the (M, alpha) envelope is fitted
  int fit_points = 64;
};

/// Certified epsilon-horizon from the Lambert-W closed form. Constants are
/// fitted as alpha = max spectral abscissa of A, A' and M = the largest sampled
/// ratio ||e^{At}|| / e^{alpha t} on the fit grid, clamped >= 1. Returns +inf
/// when the envelope bound never reaches epsilon on [0, t_max].
inline DivergenceBound epsilon_horizon(const Eigen::MatrixXd& a, const Eigen::MatrixXd& a_prime,
                                       const Eigen::VectorXd& x0, double epsilon,
                                       double tol = kDefaultSvdTol, HorizonConfig hc = {}) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon_horizon: epsilon must be > 0");
  DivergenceBound out;
  out.epsilon = epsilon;

  double alpha = -infinity();
  for (const Eigen::MatrixXd* m : {&a, &a_prime}) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(*m, false);
    if (es.info() != Eigen::Success) throw NumericalFailure("epsilon_horizon: eigensolver failed");
    alpha = std::max(alpha, es.eigenvalues().real().maxCoeff());
  }
  double m_const = 1.0;
  for (int i = 0; i <= hc.fit_points; ++i) {
    const double t = hc.t_max * i / hc.fit_points;
    const double envelope = std::exp(alpha * t);
    m_const = std::max(m_const, matrix_exp_norm(a, t) / envelope);
    m_const = std::max(m_const, matrix_exp_norm(a_prime, t) / envelope);
  }
  out.alpha = alpha;
  out.m_const = m_const;

  const double delta_norm = detail::spectral_norm(a - a_prime);
  const double dist = kernel_distance(a, x0, tol).d * x0.norm();
  const double denom = delta_norm * m_const * m_const * dist;
  if (denom <= 0.0) {
    out.horizon_t = infinity();  // x0 in the invariant subspace: trajectories coincide
    return out;
  }
  const double c = epsilon / denom;

  double horizon;
  if (std::abs(alpha) < 1e-12) {
    horizon = c;  // removable singularity of W(alpha c)/alpha
  } else {
    const double z = alpha * c;
    if (alpha < 0.0 && z < -0.36787944117144233) {
      out.horizon_t = infinity();  // envelope peaks below epsilon
      return out;
    }
    horizon = lambert_w0(z) / alpha;
  }
  out.horizon_t = horizon >= hc.t_max ? infinity() : horizon;
  return out;
}

/// Expected distance of a uniform unit vector in R^n to a fixed d0-dimensional
/// subspace: Gamma(n/2)Gamma((n-d0+1)/2) / (Gamma((n-d0)/2)Gamma((n+1)/2)).
inline double expected_kernel_distance(int n, int d0) {
  if (n < 1 || d0 < 0 || d0 >= n)
    throw std::invalid_argument("expected_kernel_distance: need 0 <= d0 < n");
  if (d0 == 0) return 1.0;
  const double log_value = std::lgamma(0.5 * n) + std::lgamma(0.5 * (n - d0 + 1)) -
                           std::lgamma(0.5 * (n - d0)) - std::lgamma(0.5 * (n + 1));
  return std::exp(log_value);
}

}  // namespace sparseid
