#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "sparseid/common.hpp"
#include "sparseid/integrator.hpp"

namespace sparseid {

enum class FitMethod { STLSQ, GradFitL1 };

inline const char* to_string(FitMethod m) { return m == FitMethod::STLSQ ? "stlsq" : "gradfit_l1"; }

struct HyperGrid {
  std::vector<double> stlsq_thresholds = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  // 1e-9 is an effectively unregularized entry: on noise-free trajectories the
  // heavier ridge weights bias the coefficients along the ill-conditioned
  // directions of the trajectory Gram and destroy exact pattern recovery.
  std::vector<double> ridge_weights = {1e-9, 0.001, 0.05, 0.1};
  std::vector<double> l1_weights = {0.0, 1e-1, 1e-2};
  std::vector<int> fd_orders = {2, 4};
};

struct SelectedHypers {
  double threshold = 0.0;  // STLSQ pruning threshold
  double ridge = 0.0;      // STLSQ ridge weight
  double l1 = 0.0;         // GradFitL1 regularization weight
  int fd_order = 0;        // STLSQ derivative stencil order
  int iters = 0;
};

struct EstimationResult {
  Eigen::MatrixXd a_hat;
  FitMethod method = FitMethod::STLSQ;
  SelectedHypers hyper;
  double r2 = quiet_nan();
  double mse = quiet_nan();
  bool well_fit = false;
  double hamming = quiet_nan();  // NaN when the true system is unknown
  bool converged = false;
};

struct FitQuality {
  double r2 = -infinity();
  double mse = infinity();
};

/// Fraction of entries whose binarized (|.| > tau) pattern differs.
inline double hamming_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& a_hat,
                               double tau = kHammingTau) {
  if (a.rows() != a_hat.rows() || a.cols() != a_hat.cols())
    throw std::invalid_argument("hamming_distance: shape mismatch");
  const int n = static_cast<int>(a.rows());
  int mismatches = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < static_cast<int>(a.cols()); ++j)
      if ((std::abs(a(i, j)) > tau) != (std::abs(a_hat(i, j)) > tau)) ++mismatches;
  return static_cast<double>(mismatches) / static_cast<double>(a.rows() * a.cols());
}

inline int zero_count(const Eigen::MatrixXd& m, double tau = kHammingTau) {
  int zeros = 0;
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j)
      if (std::abs(m(i, j)) <= tau) ++zeros;
  return zeros;
}

/// Central differences of the given order on the homogeneous grid, with
/// matching one-sided stencils at the boundaries.
inline Eigen::MatrixXd finite_difference(const Trajectory& traj, int order = 2) {
  const int k = traj.samples();
  const int n = traj.dim();
  if (order != 2 && order != 4) throw std::invalid_argument("finite_difference: order must be 2 or 4");
  if (k < order + 1) throw std::invalid_argument("finite_difference: too few samples for stencil");
  const double h = (traj.times(k - 1) - traj.times(0)) / static_cast<double>(k - 1);
  const auto& x = traj.states;
  Eigen::MatrixXd d(k, n);

  if (order == 2) {
    d.row(0) = (-3.0 * x.row(0) + 4.0 * x.row(1) - x.row(2)) / (2.0 * h);
    for (int i = 1; i < k - 1; ++i) d.row(i) = (x.row(i + 1) - x.row(i - 1)) / (2.0 * h);
    d.row(k - 1) = (3.0 * x.row(k - 1) - 4.0 * x.row(k - 2) + x.row(k - 3)) / (2.0 * h);
    return d;
  }

  d.row(0) = (-25.0 / 12.0 * x.row(0) + 4.0 * x.row(1) - 3.0 * x.row(2) + 4.0 / 3.0 * x.row(3) -
              0.25 * x.row(4)) / h;
  d.row(1) = (-3.0 * x.row(0) - 10.0 * x.row(1) + 18.0 * x.row(2) - 6.0 * x.row(3) + x.row(4)) /
             (12.0 * h);
  for (int i = 2; i < k - 2; ++i)
    d.row(i) =
        (-x.row(i + 2) + 8.0 * x.row(i + 1) - 8.0 * x.row(i - 1) + x.row(i - 2)) / (12.0 * h);
  d.row(k - 2) = (3.0 * x.row(k - 1) + 10.0 * x.row(k - 2) - 18.0 * x.row(k - 3) +
                  6.0 * x.row(k - 4) - x.row(k - 5)) / (12.0 * h);
  d.row(k - 1) = (25.0 / 12.0 * x.row(k - 1) - 4.0 * x.row(k - 2) + 3.0 * x.row(k - 3) -
                  4.0 / 3.0 * x.row(k - 4) + 0.25 * x.row(k - 5)) / h;
  return d;
}

struct StlsqFit {
  Eigen::MatrixXd a_hat;
  bool converged = false;  // active set stabilized within the iteration cap
  int iters = 0;
};

/// Sequentially thresholded least squares: iterated ridge regression with hard
/// pruning of coefficients below the threshold, per output dimension.
/// skip_boundary drops that many samples at each end of the grid, where the
/// one-sided difference stencils carry the largest derivative error.
inline StlsqFit stlsq_fit(const Eigen::MatrixXd& states_full, const Eigen::MatrixXd& derivs_full,
                          double threshold, double ridge, int max_iters = 20,
                          int skip_boundary = 0) {
  if (!(threshold > 0.0) || !(ridge > 0.0))
    throw std::invalid_argument("stlsq_fit: threshold and ridge must be > 0");
  const int k_full = static_cast<int>(states_full.rows());
  if (skip_boundary < 0 || 2 * skip_boundary >= k_full - 1)
    throw std::invalid_argument("stlsq_fit: skip_boundary leaves too few samples");
  const auto states = states_full.middleRows(skip_boundary, k_full - 2 * skip_boundary);
  const auto derivs = derivs_full.middleRows(skip_boundary, k_full - 2 * skip_boundary);
  const int n = static_cast<int>(states.cols());
  const Eigen::MatrixXd gram = states.transpose() * states;  // n x n, shared across rows

  StlsqFit fit;
  fit.a_hat = Eigen::MatrixXd::Zero(n, n);
  fit.converged = true;

  for (int row = 0; row < n; ++row) {
    const Eigen::VectorXd rhs = states.transpose() * derivs.col(row);
    std::vector<int> active(n);
    for (int j = 0; j < n; ++j) active[j] = j;

    Eigen::VectorXd coeffs = Eigen::VectorXd::Zero(n);
    int it = 0;
    bool stable = false;
    for (; it < max_iters && !stable; ++it) {
      coeffs.setZero();
      if (!active.empty()) {
        const int m = static_cast<int>(active.size());
        Eigen::MatrixXd sub(m, m);
        Eigen::VectorXd sub_rhs(m);
        for (int p = 0; p < m; ++p) {
          sub_rhs(p) = rhs(active[p]);
          for (int q = 0; q < m; ++q) sub(p, q) = gram(active[p], active[q]);
        }
        sub.diagonal().array() += ridge;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(sub);
        Eigen::VectorXd w;
        if (ldlt.info() == Eigen::Success) {
          w = ldlt.solve(sub_rhs);
        } else {
          // Singular normal equations: minimum-norm solution via SVD.
          w = sub.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(sub_rhs);
        }
        for (int p = 0; p < m; ++p) coeffs(active[p]) = w(p);
      }
      std::vector<int> next;
      next.reserve(active.size());
      for (int j : active)
        if (std::abs(coeffs(j)) >= threshold) next.push_back(j);
      stable = next == active;
      active = std::move(next);
      for (int j = 0; j < n; ++j)
        if (std::abs(coeffs(j)) < threshold) coeffs(j) = 0.0;
    }
    if (!stable) fit.converged = false;
    fit.iters = std::max(fit.iters, it);
    fit.a_hat.row(row) = coeffs.transpose();
  }
  return fit;
}

/// R^2 (total-variance pooling across dimensions) and MSE between the observed
/// trajectory and the re-integrated estimate from the same initial state, on
/// the same grid, with the same solver. Matching the observation's solver
/// makes the generating system itself score an exactly zero residual.
inline FitQuality fit_quality(const Trajectory& observed, const Eigen::MatrixXd& a_hat,
                              const Eigen::VectorXd& x0) {
  const int k = observed.samples();
  const int n = observed.dim();
  if (a_hat.rows() != n || x0.size() != n)
    throw std::invalid_argument("fit_quality: dimension mismatch");

  FitQuality q;
  Eigen::MatrixXd model(k, n);
  try {
    if (observed.solver == Solver::RK45) {
      SolveConfig cfg{observed.times(k - 1), k, observed.rtol > 0 ? observed.rtol : 1e-6,
                      observed.atol > 0 ? observed.atol : 1e-9};
      model = solve_rk45(a_hat, x0, cfg).states;
    } else {
      const double h = (observed.times(k - 1) - observed.times(0)) / static_cast<double>(k - 1);
      const Eigen::MatrixXd phi = expm(a_hat * h);
      Eigen::VectorXd x = x0;
      model.row(0) = x.transpose();
      for (int i = 1; i < k; ++i) {
        x = phi * x;
        if (!x.allFinite()) return q;
        model.row(i) = x.transpose();
      }
    }
    if (!model.allFinite()) return q;
  } catch (const NumericalFailure&) {
    return q;  // integration failure: r2 = -inf, mse = +inf
  }

  const double ss_res = (model - observed.states).squaredNorm();
  const Eigen::RowVectorXd means = observed.states.colwise().mean();
  const double ss_tot = (observed.states.rowwise() - means).squaredNorm();
  q.mse = ss_res / static_cast<double>(k * n);
  if (ss_tot <= 1e-300) {
    q.r2 = ss_res <= 1e-300 ? 1.0 : -infinity();
  } else {
    q.r2 = 1.0 - ss_res / ss_tot;
  }
  return q;
}

struct GradFitResult {
  Eigen::MatrixXd a_hat;
  double loss = infinity();       // best total loss seen (data + l1 penalty)
  double data_loss = infinity();
  int iters = 0;
  bool converged = false;  // false only when the optimization diverged
};

namespace detail {

/// Mean-absolute data loss of the linear model propagated by expm(a_hat * h),
/// and its gradient with respect to a_hat. The gradient pulls the per-step
/// adjoint back through the transition matrix and maps it onto a_hat with the
/// adjoint Frechet derivative of the matrix exponential, evaluated through the
/// augmented-matrix identity.
inline double gradfit_data_loss(const Eigen::MatrixXd& a_hat, const Trajectory& observed,
                                Eigen::MatrixXd* grad_out) {
  const int k = observed.samples();
  const int n = observed.dim();
  const double h = (observed.times(k - 1) - observed.times(0)) / static_cast<double>(k - 1);
  const double inv_kn = 1.0 / static_cast<double>(k * n);

  const Eigen::MatrixXd phi = expm(a_hat * h);
  Eigen::MatrixXd model(k, n);
  model.row(0) = observed.states.row(0);
  for (int i = 1; i < k; ++i) {
    model.row(i) = (phi * model.row(i - 1).transpose()).transpose();
    if (!model.row(i).allFinite()) {
      if (grad_out) grad_out->setZero();
      return infinity();
    }
  }

  double loss = 0.0;
  Eigen::MatrixXd sign(k, n);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) {
      const double r = model(i, j) - observed.states(i, j);
      loss += std::abs(r);
      sign(i, j) = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
    }
  loss *= inv_kn;
  if (!grad_out) return loss;

  // Reverse pass: adj_k = dL/d(model_k) accumulated through model_k = phi * model_{k-1}.
  Eigen::MatrixXd grad_phi = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd adj = inv_kn * sign.row(k - 1).transpose();
  for (int i = k - 1; i >= 1; --i) {
    grad_phi.noalias() += adj * model.row(i - 1);
    if (i > 1) adj = phi.transpose() * adj + inv_kn * sign.row(i - 1).transpose();
  }

  // d(expm(X))^* applied to grad_phi equals the upper-right block of
  // expm([[X^T, grad_phi], [0, X^T]]); chain rule contributes the factor h.
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  aug.topLeftCorner(n, n) = a_hat.transpose() * h;
  aug.bottomRightCorner(n, n) = a_hat.transpose() * h;
  aug.topRightCorner(n, n) = grad_phi;
  *grad_out = h * expm(aug).topRightCorner(n, n);
  return loss;
}

}  // namespace detail

/// First-order fit of the n^2 matrix entries minimizing the mean-absolute
/// trajectory error plus l1 * ||A||_1. RMSprop-style adaptive steps (lr 1e-3)
/// on the data term with a proximal soft-threshold for the penalty, which
/// produces exact zeros. Runs until the loss drops below loss_tol or the
/// iteration budget is exhausted; returns the best iterate seen.
inline GradFitResult gradfit_l1(const Trajectory& observed, double l1_weight, int budget = 10000,
                                double loss_tol = 1e-5) {
  if (l1_weight < 0.0) throw std::invalid_argument("gradfit_l1: l1_weight must be >= 0");
  const int n = observed.dim();
  constexpr double kLr = 1e-3;
  constexpr double kDecay = 0.99;
  constexpr double kEps = 1e-8;

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd grad(n, n);

  GradFitResult out;
  out.a_hat = a;
  out.converged = true;

  for (int it = 0; it < budget; ++it) {
    const double data_loss = detail::gradfit_data_loss(a, observed, &grad);
    const double total = data_loss + l1_weight * a.cwiseAbs().sum();
    if (!std::isfinite(total)) {
      out.converged = false;
      out.iters = it;
      return out;
    }
    if (total < out.loss) {
      out.loss = total;
      out.data_loss = data_loss;
      out.a_hat = a;
    }
    out.iters = it + 1;
    if (total < loss_tol) return out;

    sq = kDecay * sq + (1.0 - kDecay) * grad.cwiseProduct(grad);
    const Eigen::MatrixXd step = kLr * (sq.cwiseSqrt().array() + kEps).inverse().matrix();
    a -= step.cwiseProduct(grad);
    if (l1_weight > 0.0) {
      // Proximal step for the l1 term with the same per-coordinate step size.
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double shrink = step(i, j) * l1_weight;
          const double v = a(i, j);
          a(i, j) = std::abs(v) <= shrink ? 0.0 : v - shrink * (v > 0.0 ? 1.0 : -1.0);
        }
    }
  }
  return out;
}

/// Data-term loss/gradient hook for verification against finite differences.
inline double gradfit_data_loss_and_grad(const Eigen::MatrixXd& a_hat, const Trajectory& observed,
                                         Eigen::MatrixXd* grad_out = nullptr) {
  return detail::gradfit_data_loss(a_hat, observed, grad_out);
}

namespace detail {

inline bool sparser_or_smaller(const Eigen::MatrixXd& cand, double cand_param,
                               const Eigen::MatrixXd& best, double best_param) {
  const int zc = zero_count(cand);
  const int zb = zero_count(best);
  if (zc != zb) return zc > zb;  // prefer sparser
  return cand_param < best_param;
}

}  // namespace detail

// Re-integration residual ratios below this factor are indistinguishable from
// solver noise; such candidates count as R^2 ties.
inline constexpr double kMseTieFactor = 2.0;

/// STLSQ hyperparameter selection: maximize the R^2 of the re-integrated
/// estimate over the (threshold, ridge, fd_order) grid. Candidates within the
/// solver-noise window of the best count as tied; ties resolve toward the
/// sparser estimate, then the smaller threshold. Well-fit requires both
/// R^2 > 0.99 and MSE < 1e-4.
inline EstimationResult select_hypers_stlsq(const Trajectory& traj,
                                            const std::optional<Eigen::MatrixXd>& a_true,
                                            const HyperGrid& grid = {}) {
  if (grid.stlsq_thresholds.empty() || grid.ridge_weights.empty() || grid.fd_orders.empty())
    throw std::invalid_argument("select_hypers_stlsq: empty grid");
  const Eigen::VectorXd x0 = traj.states.row(0).transpose();

  struct Candidate {
    Eigen::MatrixXd a_hat;
    SelectedHypers hyper;
    FitQuality quality;
    bool converged = false;
    int zeros = 0;
  };
  std::vector<Candidate> candidates;
  double best_mse = infinity();
  for (int order : grid.fd_orders) {
    const Eigen::MatrixXd derivs = finite_difference(traj, order);
    const int skip = order / 2;  // rows covered by one-sided stencils
    for (double threshold : grid.stlsq_thresholds) {
      for (double ridge : grid.ridge_weights) {
        const StlsqFit fit = stlsq_fit(traj.states, derivs, threshold, ridge, 20, skip);
        Candidate c;
        c.quality = fit_quality(traj, fit.a_hat, x0);
        c.hyper = SelectedHypers{threshold, ridge, 0.0, order, fit.iters};
        c.converged = fit.converged;
        c.zeros = zero_count(fit.a_hat);
        c.a_hat = fit.a_hat;
        if (std::isfinite(c.quality.mse)) best_mse = std::min(best_mse, c.quality.mse);
        candidates.push_back(std::move(c));
      }
    }
  }

  const Candidate* pick = nullptr;
  for (const auto& c : candidates) {
    if (std::isfinite(best_mse) && !(c.quality.mse <= kMseTieFactor * best_mse)) continue;
    if (!pick || c.zeros > pick->zeros ||
        (c.zeros == pick->zeros && c.hyper.threshold < pick->hyper.threshold))
      pick = &c;
  }
  if (!pick) {
    for (const auto& c : candidates)
      if (!pick || c.quality.r2 > pick->quality.r2) pick = &c;
  }

  EstimationResult best;
  best.method = FitMethod::STLSQ;
  best.a_hat = pick->a_hat;
  best.hyper = pick->hyper;
  best.r2 = pick->quality.r2;
  best.mse = pick->quality.mse;
  best.converged = pick->converged;
  best.well_fit = best.r2 > 0.99 && best.mse < 1e-4;
  if (a_true) best.hamming = hamming_distance(*a_true, best.a_hat);
  return best;
}

/// GradFitL1 selection: among l1 weights whose fits are well-fit
/// (R^2 > 0.99 or MSE < 1e-4), pick the one whose zero count is closest to the
/// true system's; requires the true matrix and falls back to best R^2 when no
/// candidate passes the filter (or no truth is available).
inline EstimationResult select_hypers_gradfit(const Trajectory& traj,
                                              const std::optional<Eigen::MatrixXd>& a_true,
                                              const HyperGrid& grid = {}, int budget = 10000) {
  if (grid.l1_weights.empty()) throw std::invalid_argument("select_hypers_gradfit: empty grid");
  const Eigen::VectorXd x0 = traj.states.row(0).transpose();

  struct Candidate {
    EstimationResult result;
    bool well_fit = false;
    int zero_mismatch = 0;
  };
  std::vector<Candidate> candidates;
  for (double l1 : grid.l1_weights) {
    const GradFitResult fit = gradfit_l1(traj, l1, budget);
    const FitQuality q = fit_quality(traj, fit.a_hat, x0);
    Candidate c;
    c.result.a_hat = fit.a_hat;
    c.result.method = FitMethod::GradFitL1;
    c.result.hyper = SelectedHypers{0.0, 0.0, l1, 0, fit.iters};
    c.result.r2 = q.r2;
    c.result.mse = q.mse;
    c.result.converged = fit.converged;
    c.well_fit = q.r2 > 0.99 || q.mse < 1e-4;
    c.result.well_fit = c.well_fit;
    if (a_true) c.zero_mismatch = std::abs(zero_count(c.result.a_hat) - zero_count(*a_true));
    candidates.push_back(std::move(c));
  }

  const Candidate* best = nullptr;
  if (a_true) {
    for (const auto& c : candidates) {
      if (!c.well_fit) continue;
      if (!best || c.zero_mismatch < best->zero_mismatch ||
          (c.zero_mismatch == best->zero_mismatch &&
           detail::sparser_or_smaller(c.result.a_hat, c.result.hyper.l1, best->result.a_hat,
                                      best->result.hyper.l1)))
        best = &c;
    }
  }
  if (!best) {
    for (const auto& c : candidates)
      if (!best || c.result.r2 > best->result.r2) best = &c;
  }
  EstimationResult out = best->result;
  if (a_true) out.hamming = hamming_distance(*a_true, out.a_hat);
  return out;
}

}  // namespace sparseid
