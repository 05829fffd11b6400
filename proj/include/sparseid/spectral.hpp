#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sparseid/common.hpp"
#include "sparseid/ensemble.hpp"
#include "sparseid/matching.hpp"

namespace sparseid {

/// Per-system identifiability verdicts.
struct IdentReport {
  int dim = 0;
  int rank = 0;
  bool rank_deficient2 = false;  // rank < n-1, condition (i)
  double sigma2 = 0.0;           // second-smallest singular value
  std::vector<std::complex<double>> eigenvalues;
  bool has_zero_eig = false;            // condition (iii)
  bool exists_lambda_rank_drop = false; // condition (ii)
  std::complex<double> witness_lambda{0.0, 0.0};
  bool globally_unidentifiable = false;
  int structural_rank_upper = 0;  // n - Hall deficiency of the zero pattern
  int matching_lower = 0;         // maximum bipartite matching of the zero pattern
  double svd_tol = kDefaultSvdTol;
};

struct BoundEval {
  int dim = 0;
  double sparsity = 0.0;
  double lower_bound = 0.0;
  double p_critical = 0.0;  // NaN when dim < 2
};

/// Full singular spectrum, descending. sigma2 is the second-smallest entry.
inline std::vector<double> singular_values(const Eigen::MatrixXd& a) {
  if (!a.allFinite()) throw NumericalFailure("singular_values: non-finite entries");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  return std::vector<double>(s.data(), s.data() + s.size());
}

inline int count_above(const std::vector<double>& descending, double tol) {
  int r = 0;
  for (double s : descending)
    if (s > tol) ++r;
  return r;
}

/// Count of singular values above tol.
inline int numeric_rank(const Eigen::MatrixXd& a, double tol = kDefaultSvdTol) {
  if (tol <= 0.0) throw std::invalid_argument("numeric_rank: tol must be > 0");
  return count_above(singular_values(a), tol);
}

/// Complex-field numeric rank, used for rank(A - lambda*I) at complex lambda.
inline int numeric_rank(const Eigen::MatrixXcd& a, double tol = kDefaultSvdTol) {
  if (tol <= 0.0) throw std::invalid_argument("numeric_rank: tol must be > 0");
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(a);
  const auto& s = svd.singularValues();
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > tol) ++r;
  return r;
}

/// All n eigenvalues with multiplicity (real Schur based).
inline std::vector<std::complex<double>> eigenvalues(const Eigen::MatrixXd& a) {
  if (!a.allFinite()) throw NumericalFailure("eigenvalues: non-finite entries");
  Eigen::EigenSolver<Eigen::MatrixXd> es(a, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) throw NumericalFailure("eigenvalues: QR iteration did not converge");
  const auto& ev = es.eigenvalues();
  std::vector<std::complex<double>> out(ev.data(), ev.data() + ev.size());
  return out;
}

struct UnidentCheck {
  bool unidentifiable = false;
  std::complex<double> witness{0.0, 0.0};
};

namespace detail {

inline int rank_of_shifted(const Eigen::MatrixXd& a, std::complex<double> lambda, double tol) {
  const int n = static_cast<int>(a.rows());
  if (lambda.imag() == 0.0) {
    Eigen::MatrixXd shifted = a;
    shifted.diagonal().array() -= lambda.real();
    return numeric_rank(shifted, tol);
  }
  Eigen::MatrixXcd shifted = a.cast<std::complex<double>>();
  for (int i = 0; i < n; ++i) shifted(i, i) -= lambda;
  return numeric_rank(shifted, tol);
}

}  // namespace detail

/// Condition (ii): some lambda with rank(A - lambda I) < n-1. Rank can only drop
/// at eigenvalues, so the computed spectrum is the candidate set; conjugate
/// pairs share singular values and are tested once.
inline UnidentCheck exists_eigenvalue_rank_drop(const Eigen::MatrixXd& a,
                                                const std::vector<std::complex<double>>& eigs,
                                                double tol = kDefaultSvdTol) {
  const int n = static_cast<int>(a.rows());
  if (n == 1) {
    // rank < 0 is impossible; the 1-d system is unidentifiable only when A = 0.
    const bool zero = std::abs(a(0, 0)) < tol;
    return UnidentCheck{zero, {0.0, 0.0}};
  }
  std::vector<std::complex<double>> tested;
  tested.reserve(eigs.size());
  for (const auto& lam : eigs) {
    if (lam.imag() < 0.0) continue;  // conjugate gives the same singular values
    bool duplicate = false;
    for (const auto& seen : tested)
      if (std::abs(lam - seen) < 1e-12) { duplicate = true; break; }
    if (duplicate) continue;
    tested.push_back(lam);
    if (detail::rank_of_shifted(a, lam, tol) < n - 1) return UnidentCheck{true, lam};
  }
  return UnidentCheck{false, {0.0, 0.0}};
}

inline UnidentCheck is_globally_unidentifiable(const Eigen::MatrixXd& a, double tol = kDefaultSvdTol) {
  if (tol <= 0.0) throw std::invalid_argument("is_globally_unidentifiable: tol must be > 0");
  return exists_eigenvalue_rank_drop(a, eigenvalues(a), tol);
}

/// Maximum-matching lower bound and Hall-deficiency upper bound on the rank of
/// any matrix with the given nonzero pattern. By the defect form of Hall's
/// theorem the two coincide on bipartite pattern graphs; asserted here.
inline std::pair<int, int> structural_rank_bounds(const std::vector<std::vector<bool>>& nonzero) {
  const int n = static_cast<int>(nonzero.size());
  std::vector<std::vector<int>> adj(n);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(nonzero[i].size()) != n)
      throw std::invalid_argument("structural_rank_bounds: pattern must be square");
    for (int j = 0; j < n; ++j)
      if (nonzero[i][j]) adj[i].push_back(j);
  }
  BipartiteMatcher matcher(n, n, std::move(adj));
  const int m = matcher.max_matching();
  const int deficiency = n - m;  // Koenig dual of the matching
  const int upper = n - deficiency;
  if (upper != m) throw NumericalFailure("structural_rank_bounds: matching/deficiency mismatch");
  return {m, upper};
}

inline std::vector<std::vector<bool>> zero_pattern(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  std::vector<std::vector<bool>> nz(n, std::vector<bool>(n, false));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) nz[i][j] = a(i, j) != 0.0;
  return nz;
}

/// Closed-form lower bound on P(globally unidentifiable) for the
/// sparse-continuous ensemble: 1 - (1-p^n)^n - n p^n (1-p^n)^{n-1} for n >= 2,
/// and p for n = 1.
inline double unident_lower_bound(int n, double p) {
  if (n < 1) throw std::invalid_argument("unident_lower_bound: n must be >= 1");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("unident_lower_bound: p must lie in [0,1]");
  if (n == 1) return p;
  const double q = std::pow(p, n);
  return 1.0 - std::pow(1.0 - q, n) - n * q * std::pow(1.0 - q, n - 1);
}

/// Critical sparsity p_c(n) = 1 - ln(n)/n separating the asymptotically
/// identifiable regime from the unidentifiable one.
inline double critical_sparsity(int n) {
  if (n < 2) throw std::invalid_argument("critical_sparsity: n must be >= 2");
  return 1.0 - std::log(static_cast<double>(n)) / static_cast<double>(n);
}

inline BoundEval evaluate_bounds(int n, double p) {
  BoundEval b;
  b.dim = n;
  b.sparsity = p;
  b.lower_bound = unident_lower_bound(n, p);
  b.p_critical = n >= 2 ? critical_sparsity(n) : quiet_nan();
  return b;
}

/// Full identifiability report for one system matrix.
inline IdentReport analyze_system(const Eigen::MatrixXd& a, double tol = kDefaultSvdTol) {
  if (tol <= 0.0) throw std::invalid_argument("analyze_system: tol must be > 0");
  const int n = static_cast<int>(a.rows());
  IdentReport r;
  r.dim = n;
  r.svd_tol = tol;

  const std::vector<double> sv = singular_values(a);
  r.rank = count_above(sv, tol);
  r.sigma2 = n >= 2 ? sv[n - 2] : sv[0];
  r.rank_deficient2 = n >= 2 ? r.rank < n - 1 : false;

  r.eigenvalues = eigenvalues(a);
  r.has_zero_eig = false;
  for (const auto& lam : r.eigenvalues)
    if (std::abs(lam) < tol) { r.has_zero_eig = true; break; }

  const UnidentCheck check = exists_eigenvalue_rank_drop(a, r.eigenvalues, tol);
  r.exists_lambda_rank_drop = check.unidentifiable;
  r.witness_lambda = check.witness;
  r.globally_unidentifiable = check.unidentifiable;

  const auto [lower, upper] = structural_rank_bounds(zero_pattern(a));
  r.matching_lower = lower;
  r.structural_rank_upper = upper;
  return r;
}

}  // namespace sparseid
