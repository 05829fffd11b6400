#pragma once

#include <Eigen/Dense>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "sparseid/common.hpp"

namespace sparseid {

enum class Solver { RK45, Expm };

inline const char* to_string(Solver s) { return s == Solver::RK45 ? "rk45" : "expm"; }

struct SolveConfig {
  double T = 1.0;
  int steps = 512;       // number of sample points on [0,T]
  double rtol = 1e-6;
  double atol = 1e-9;

  void validate() const {
    if (!(T > 0.0)) throw std::invalid_argument("SolveConfig: T must be > 0");
    if (steps < 2) throw std::invalid_argument("SolveConfig: steps must be >= 2");
    if (!(rtol > 0.0) || !(atol > 0.0))
      throw std::invalid_argument("SolveConfig: tolerances must be > 0");
  }
};

struct Trajectory {
  Eigen::VectorXd times;   // K samples, homogeneous, times[0]=0, times[K-1]=T
  Eigen::MatrixXd states;  // K x n
  Solver solver = Solver::RK45;
  double rtol = 0.0;
  double atol = 0.0;
  // Provenance, filled by the harness.
  std::uint64_t system_seed = 0;
  std::int64_t draw_index = 0;
  std::uint64_t x0_seed = 0;

  int samples() const { return static_cast<int>(times.size()); }
  int dim() const { return static_cast<int>(states.cols()); }
};

/// Matrix exponential by scaling-and-squaring with a [6/6] Pade approximant.
/// The scaling power is chosen from the induced 1-norm so that the scaled
/// argument satisfies ||A/2^s||_1 <= 0.5, where the Pade truncation error is
/// far below double precision.
inline Eigen::MatrixXd expm(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  if (a.cols() != n) throw std::invalid_argument("expm: matrix must be square");
  if (!a.allFinite()) throw OverflowFailure("expm: non-finite input");

  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  int s = 0;
  if (norm1 > 0.5) s = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));

  Eigen::MatrixXd x = a / std::ldexp(1.0, s);

  // Pade [6/6] coefficients c_k = c_{k-1} * (7-k) / (k * (13-k)).
  double c[7];
  c[0] = 1.0;
  for (int k = 1; k <= 6; ++k) c[k] = c[k - 1] * (7.0 - k) / (k * (13.0 - k));

  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd x2 = x * x;
  const Eigen::MatrixXd x4 = x2 * x2;
  const Eigen::MatrixXd x6 = x4 * x2;
  const Eigen::MatrixXd even = c[0] * identity + c[2] * x2 + c[4] * x4 + c[6] * x6;
  const Eigen::MatrixXd odd = x * (c[1] * identity + c[3] * x2 + c[5] * x4);

  Eigen::PartialPivLU<Eigen::MatrixXd> lu(even - odd);
  Eigen::MatrixXd e = lu.solve(even + odd);
  for (int i = 0; i < s; ++i) e = e * e;

  if (!e.allFinite()) throw OverflowFailure("expm: overflow while squaring");
  return e;
}

/// Spectral norm of expm(A*t).
inline double matrix_exp_norm(const Eigen::MatrixXd& a, double t) {
  if (t < 0.0) throw std::invalid_argument("matrix_exp_norm: t must be >= 0");
  if (t == 0.0) return 1.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(expm(a * t));
  return svd.singularValues()(0);
}

namespace detail {

inline Eigen::VectorXd homogeneous_grid(double T, int steps) {
  Eigen::VectorXd t(steps);
  const double h = T / static_cast<double>(steps - 1);
  for (int k = 0; k < steps; ++k) t(k) = k * h;
  t(steps - 1) = T;
  return t;
}

}  // namespace detail

/// Exact solution states[k] = expm(A t_k) x0, propagated with the one-step
/// transition matrix of the homogeneous grid. Ground-truth oracle for the
/// adaptive solver.
inline Trajectory solve_expm(const Eigen::MatrixXd& a, const Eigen::VectorXd& x0,
                             const SolveConfig& cfg = {}) {
  cfg.validate();
  const int n = static_cast<int>(a.rows());
  if (x0.size() != n) throw std::invalid_argument("solve_expm: dimension mismatch");

  Trajectory traj;
  traj.solver = Solver::Expm;
  traj.rtol = cfg.rtol;
  traj.atol = cfg.atol;
  traj.times = detail::homogeneous_grid(cfg.T, cfg.steps);
  traj.states.resize(cfg.steps, n);
  traj.states.row(0) = x0.transpose();

  const double h = cfg.T / static_cast<double>(cfg.steps - 1);
  const Eigen::MatrixXd phi = expm(a * h);
  Eigen::VectorXd x = x0;
  for (int k = 1; k < cfg.steps; ++k) {
    x = phi * x;
    if (!x.allFinite()) throw OverflowFailure("solve_expm: trajectory overflow");
    traj.states.row(k) = x.transpose();
  }
  return traj;
}

namespace detail {

// Dormand-Prince 5(4) tableau.
inline constexpr double kC2 = 1.0 / 5, kC3 = 3.0 / 10, kC4 = 4.0 / 5, kC5 = 8.0 / 9;
inline constexpr double kA21 = 1.0 / 5;
inline constexpr double kA31 = 3.0 / 40, kA32 = 9.0 / 40;
inline constexpr double kA41 = 44.0 / 45, kA42 = -56.0 / 15, kA43 = 32.0 / 9;
inline constexpr double kA51 = 19372.0 / 6561, kA52 = -25360.0 / 2187, kA53 = 64448.0 / 6561,
                        kA54 = -212.0 / 729;
inline constexpr double kA61 = 9017.0 / 3168, kA62 = -355.0 / 33, kA63 = 46732.0 / 5247,
                        kA64 = 49.0 / 176, kA65 = -5103.0 / 18656;
inline constexpr double kB1 = 35.0 / 384, kB3 = 500.0 / 1113, kB4 = 125.0 / 192,
                        kB5 = -2187.0 / 6784, kB6 = 11.0 / 84;
// b - bhat, the embedded 4th-order error weights.
inline constexpr double kE1 = 71.0 / 57600, kE3 = -71.0 / 16695, kE4 = 71.0 / 1920,
                        kE5 = -17253.0 / 339200, kE6 = 22.0 / 525, kE7 = -1.0 / 40;
// Dense-output weights for the 4th-order continuous extension.
inline constexpr double kD1 = -12715105075.0 / 11282082432.0;
inline constexpr double kD3 = 87487479700.0 / 32700410799.0;
inline constexpr double kD4 = -10690763975.0 / 1880347072.0;
inline constexpr double kD5 = 701980252875.0 / 199316789632.0;
inline constexpr double kD6 = -1453857185.0 / 822651844.0;
inline constexpr double kD7 = 69997945.0 / 29380423.0;

}  // namespace detail

/// Adaptive Dormand-Prince 5(4) integration of xdot = A x, sampled on the
/// homogeneous grid through the solver's quartic interpolant so the error
/// control stays valid between accepted steps.
inline Trajectory solve_rk45(const Eigen::MatrixXd& a, const Eigen::VectorXd& x0,
                             const SolveConfig& cfg = {}) {
  using namespace detail;
  cfg.validate();
  const int n = static_cast<int>(a.rows());
  if (x0.size() != n) throw std::invalid_argument("solve_rk45: dimension mismatch");

  Trajectory traj;
  traj.solver = Solver::RK45;
  traj.rtol = cfg.rtol;
  traj.atol = cfg.atol;
  traj.times = homogeneous_grid(cfg.T, cfg.steps);
  traj.states.resize(cfg.steps, n);
  traj.states.row(0) = x0.transpose();

  const auto f = [&a](const Eigen::VectorXd& y) -> Eigen::VectorXd { return a * y; };

  Eigen::VectorXd y = x0;
  Eigen::VectorXd k1 = f(y);

  // Initial step size from the standard two-stage estimate, in the
  // tolerance-scaled norm so the choice is invariant under state scaling.
  double h;
  {
    const auto scaled_norm = [&](const Eigen::VectorXd& v) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        const double sc = cfg.atol + cfg.rtol * std::abs(y(i));
        acc += (v(i) / sc) * (v(i) / sc);
      }
      return std::sqrt(acc / n);
    };
    const double d0 = scaled_norm(y);
    const double d1 = scaled_norm(k1);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, cfg.T);
    const Eigen::VectorXd y1 = y + h0 * k1;
    const double d2 = scaled_norm(f(y1) - k1) / h0;
    const double dmax = std::max(d1, d2);
    const double h1 =
        dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 0.2);
    h = std::min({100.0 * h0, h1, cfg.T});
  }

  const double safety = 0.9;
  const double min_scale = 0.2;
  const double max_scale = 10.0;
  double t = 0.0;
  int next_sample = 1;
  long rejected_in_a_row = 0;

  Eigen::VectorXd k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), y_new(n), y_err(n);

  while (next_sample < cfg.steps) {
    if (t + h > cfg.T) h = cfg.T - t;
    if (h < 1e-14 * cfg.T || !(h > 0.0))
      throw StepSizeUnderflow("solve_rk45: step size underflow at t=" + std::to_string(t));

    k2 = f(y + h * (kA21 * k1));
    k3 = f(y + h * (kA31 * k1 + kA32 * k2));
    k4 = f(y + h * (kA41 * k1 + kA42 * k2 + kA43 * k3));
    k5 = f(y + h * (kA51 * k1 + kA52 * k2 + kA53 * k3 + kA54 * k4));
    k6 = f(y + h * (kA61 * k1 + kA62 * k2 + kA63 * k3 + kA64 * k4 + kA65 * k5));
    y_new = y + h * (kB1 * k1 + kB3 * k3 + kB4 * k4 + kB5 * k5 + kB6 * k6);
    k7 = f(y_new);
    y_err = h * (kE1 * k1 + kE3 * k3 + kE4 * k4 + kE5 * k5 + kE6 * k6 + kE7 * k7);

    double err = 0.0;
    for (int i = 0; i < n; ++i) {
      const double scale = cfg.atol + cfg.rtol * std::max(std::abs(y(i)), std::abs(y_new(i)));
      const double e = y_err(i) / scale;
      err += e * e;
    }
    err = std::sqrt(err / n);

    if (err <= 1.0) {
      rejected_in_a_row = 0;
      // Dense output over [t, t+h]; emit every grid point inside this step.
      const Eigen::VectorXd ydiff = y_new - y;
      const Eigen::VectorXd bspl = h * k1 - ydiff;
      const Eigen::VectorXd r4 = ydiff - h * k7 - bspl;
      const Eigen::VectorXd r5 =
          h * (kD1 * k1 + kD3 * k3 + kD4 * k4 + kD5 * k5 + kD6 * k6 + kD7 * k7);
      const double t_new = t + h;
      while (next_sample < cfg.steps && traj.times(next_sample) <= t_new + 1e-14 * cfg.T) {
        const double ts = traj.times(next_sample);
        if (ts >= t_new - 1e-14 * cfg.T) {
          traj.states.row(next_sample) = y_new.transpose();
        } else {
          const double theta = (ts - t) / h;
          const double theta1 = 1.0 - theta;
          traj.states.row(next_sample) =
              (y + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)))).transpose();
        }
        ++next_sample;
      }
      t = t_new;
      y = y_new;
      k1 = k7;  // FSAL
      if (!y.allFinite()) throw OverflowFailure("solve_rk45: trajectory overflow");
      const double scale =
          err == 0.0 ? max_scale : std::clamp(safety * std::pow(err, -0.2), min_scale, max_scale);
      h *= scale;
    } else {
      if (++rejected_in_a_row > 200)
        throw StepSizeUnderflow("solve_rk45: repeated step rejection at t=" + std::to_string(t));
      h *= std::clamp(safety * std::pow(err, -0.2), min_scale, 1.0);
    }
  }
  return traj;
}

inline Trajectory solve_ivp(const Eigen::MatrixXd& a, const Eigen::VectorXd& x0,
                            const SolveConfig& cfg, Solver solver) {
  return solver == Solver::RK45 ? solve_rk45(a, x0, cfg) : solve_expm(a, x0, cfg);
}

}  // namespace sparseid
