#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <vector>

#include "quadgait/errors.hpp"
#include "quadgait/integrate.hpp"
#include "quadgait/model.hpp"

namespace quadgait {

/// Unknowns of the periodic-gait boundary-value problem, in a fixed full
/// layout. x0 is 0 by convention and excluded; ydot0 keeps its slot but is
/// hard-coded to 0 (the stride starts and ends at an apex).
using VecZ = Eigen::Matrix<double, 14, 1>;

enum ZIndex : int {
  kZy0 = 0,
  kZphi0 = 1,
  kZalphaF0 = 2,
  kZalphaH0 = 3,
  kZxdot0 = 4,
  kZydot0 = 5,
  kZphidot0 = 6,
  kZalphadotF0 = 7,
  kZalphadotH0 = 8,
  kZtHtd = 9,
  kZtHlo = 10,
  kZtFtd = 11,
  kZtFlo = 12,
  kZtStride = 13,
};
inline constexpr int kZdim = 14;

inline EventSchedule schedule_of(const VecZ& Z) {
  return {Z[kZtHtd], Z[kZtHlo], Z[kZtFtd], Z[kZtFlo], Z[kZtStride]};
}

/// Body state encoded by Z at stride start, before contact attachment.
/// ydot is always 0 here regardless of the (dead) slot value.
inline HybridState encode_state(const VecZ& Z) {
  HybridState s;
  s.q[kQY] = Z[kZy0];
  s.q[kQPhi] = Z[kZphi0];
  s.q[kQAlphaF] = Z[kZalphaF0];
  s.q[kQAlphaH] = Z[kZalphaH0];
  s.qdot[kQX] = Z[kZxdot0];
  s.qdot[kQY] = 0.0;
  s.qdot[kQPhi] = Z[kZphidot0];
  s.qdot[kQAlphaF] = Z[kZalphadotF0];
  s.qdot[kQAlphaH] = Z[kZalphadotH0];
  return s;
}

/// Initial hybrid state with scheduled contacts attached (a stance that
/// wraps the stride boundary is active at t = 0).
inline HybridState initial_state_of(const VecZ& Z, const ModelParams& p) {
  return attach_scheduled_contacts(encode_state(Z), schedule_of(Z), p);
}

inline double solution_energy(const VecZ& Z, const ModelParams& p) {
  return total_energy(initial_state_of(Z, p), p);
}

/// Maps between the full 14-slot layout and the active unknowns. ydot0 is
/// never active; with frozen pitch (J infinite) phi0 and phidot0 drop too,
/// along with the two pitch periodicity rows of the residual.
struct ActiveLayout {
  bool pitch_active = true;

  static ActiveLayout of(const ModelParams& p) {
    return {!p.body_inertia.is_infinite()};
  }

  int active_count() const { return pitch_active ? 13 : 11; }
  int residual_count() const { return active_count() + 1; }

  std::vector<int> active_indices() const {
    std::vector<int> idx;
    for (int i = 0; i < kZdim; ++i) {
      if (i == kZydot0) continue;
      if (!pitch_active && (i == kZphi0 || i == kZphidot0)) continue;
      idx.push_back(i);
    }
    return idx;
  }

  Eigen::VectorXd pack(const VecZ& Z) const {
    const auto idx = active_indices();
    Eigen::VectorXd x(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) x[k] = Z[idx[k]];
    return x;
  }

  VecZ unpack(const Eigen::VectorXd& x) const {
    VecZ Z = VecZ::Zero();
    const auto idx = active_indices();
    for (std::size_t k = 0; k < idx.size(); ++k) Z[idx[k]] = x[k];
    return Z;
  }
};

/// Periodicity residual of one stride: position returns (R1-R4, without x),
/// velocity returns (R5-R9), apex at stride end (R10), and fully extended
/// legs at the four scheduled contact changes (R11-R14). With frozen pitch
/// the two pitch rows drop out.
inline Eigen::VectorXd residual(const VecZ& Z, const ModelParams& p,
                                const IntegratorOptions& opts = {}) {
  const ActiveLayout lay = ActiveLayout::of(p);
  const EventSchedule sched = schedule_of(Z);
  const Trajectory traj = integrate_timed(encode_state(Z), sched, p, opts);
  const Vec10 yT = traj.body_at(sched.t_stride);

  Eigen::VectorXd R(lay.residual_count());
  int r = 0;
  R[r++] = yT[kQY] - Z[kZy0];
  if (lay.pitch_active) R[r++] = yT[kQPhi] - Z[kZphi0];
  R[r++] = yT[kQAlphaF] - Z[kZalphaF0];
  R[r++] = yT[kQAlphaH] - Z[kZalphaH0];
  R[r++] = yT[5 + kQX] - Z[kZxdot0];
  R[r++] = yT[5 + kQY] - 0.0;
  if (lay.pitch_active) R[r++] = yT[5 + kQPhi] - Z[kZphidot0];
  R[r++] = yT[5 + kQAlphaF] - Z[kZalphadotF0];
  R[r++] = yT[5 + kQAlphaH] - Z[kZalphadotH0];
  R[r++] = yT[5 + kQY];  // apex section, kept alongside R6 as written
  R[r++] = extension_residual(traj.body_at(sched.t_Htd).head<5>(), Leg::Hind, p);
  R[r++] = extension_residual(traj.body_at(sched.t_Hlo).head<5>(), Leg::Hind, p);
  R[r++] = extension_residual(traj.body_at(sched.t_Ftd).head<5>(), Leg::Front, p);
  R[r++] = extension_residual(traj.body_at(sched.t_Flo).head<5>(), Leg::Front, p);
  return R;
}

namespace detail {

/// Central-difference columns of an R^active -> R^m map around Z, computed
/// in parallel (each column is two independent evaluations over immutable
/// inputs). h_k = max(1e-6, 1e-6 |Z_k|).
template <typename Fn>
Eigen::MatrixXd fd_jacobian(const Fn& fn, const VecZ& Z, const ActiveLayout& lay,
                            int rows) {
  const auto idx = lay.active_indices();
  Eigen::MatrixXd J(rows, idx.size());
  std::vector<std::future<Eigen::VectorXd>> cols;
  cols.reserve(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    cols.push_back(std::async(std::launch::async, [&, k]() {
      const double h = std::max(1e-6, 1e-6 * std::abs(Z[idx[k]]));
      VecZ Zp = Z, Zm = Z;
      Zp[idx[k]] += h;
      Zm[idx[k]] -= h;
      // Near a feasibility boundary (a stance leg approaching horizontal, a
      // flight interval closing) one side of the probe can be unintegrable;
      // a one-sided difference against the center keeps the column usable.
      try {
        return Eigen::VectorXd(((fn(Zp) - fn(Zm)) / (2.0 * h)).eval());
      } catch (const NumericalError&) {
        const Eigen::VectorXd F0 = fn(Z);
        try {
          return Eigen::VectorXd(((fn(Zp) - F0) / h).eval());
        } catch (const NumericalError&) {
          return Eigen::VectorXd(((F0 - fn(Zm)) / h).eval());
        }
      }
    }));
  }
  for (std::size_t k = 0; k < idx.size(); ++k) J.col(k) = cols[k].get();
  return J;
}

}  // namespace detail

inline Eigen::MatrixXd jacobian(const VecZ& Z, const ModelParams& p,
                                const IntegratorOptions& opts = {}) {
  const ActiveLayout lay = ActiveLayout::of(p);
  return detail::fd_jacobian(
      [&](const VecZ& z) { return residual(z, p, opts); }, Z, lay,
      lay.residual_count());
}

/// Extra scalar equation g(Z) = 0 appended below the periodicity residual
/// (arclength, anchors, pinned coordinates).
using ConstraintFn = std::function<double(const VecZ&)>;

/// Inequality acceptance check applied to the converged solution.
using FilterFn = std::function<bool(const VecZ&)>;

struct SolveOptions {
  int max_iterations = 40;
  int max_halvings = 8;
  double residual_tol = 1e-9;  // on ||stacked system||_inf
  double step_tol = 1e-10;     // on the full Newton step norm
  IntegratorOptions integrator;
};

struct SolveReport {
  bool converged = false;
  int iterations = 0;
  std::vector<double> residual_norms;  // ||stack||_inf per iterate
  Eigen::MatrixXd last_jacobian;       // stacked Jacobian at the final iterate
};

/// Damped Newton on the stacked system [T(Z); constraints(Z)] = 0 over the
/// active unknowns. The unconstrained system is rank-deficient by one
/// (conservative dynamics), so steps are minimum-norm least-squares;
/// callers square the system with constraints when they need a unique
/// target. Filters are checked on the converged point.
inline VecZ solve(const VecZ& guess, const ModelParams& p,
                  const std::vector<ConstraintFn>& constraints = {},
                  const std::vector<FilterFn>& filters = {},
                  const SolveOptions& opts = {}, SolveReport* report = nullptr) {
  const ActiveLayout lay = ActiveLayout::of(p);
  const int nr = lay.residual_count();
  const int m = nr + static_cast<int>(constraints.size());
  VecZ Z = lay.unpack(lay.pack(guess));  // zero the inactive slots

  auto eval_stack = [&](const VecZ& z) {
    Eigen::VectorXd F(m);
    F.head(nr) = residual(z, p, opts.integrator);
    for (std::size_t i = 0; i < constraints.size(); ++i)
      F[nr + static_cast<int>(i)] = constraints[i](z);
    return F;
  };

  Eigen::VectorXd F = eval_stack(Z);
  if (report != nullptr) {
    *report = {};
    report->residual_norms.push_back(F.cwiseAbs().maxCoeff());
  }

  bool converged = false;
  double last_move = std::numeric_limits<double>::infinity();
  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    const Eigen::MatrixXd J = detail::fd_jacobian(eval_stack, Z, lay, m);
    if (report != nullptr) report->last_jacobian = J;
    // Rank cutoff keeps the conservative-family null direction out of the
    // step; without it the minimum-norm solve amplifies residual noise
    // along that direction and the line search stalls at the floor.
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
    cod.setThreshold(1e-6);
    cod.compute(J);
    const Eigen::VectorXd dx = cod.solve((-F).eval());
    // Near a bifurcation the Jacobian is singular beyond the rank cutoff and
    // the nominal step stays noise-amplified however small the residual, so
    // a collapsed accepted move counts the same as a collapsed full step.
    if (F.cwiseAbs().maxCoeff() < opts.residual_tol &&
        (dx.norm() < opts.step_tol || last_move < opts.step_tol)) {
      converged = true;
      if (report != nullptr) report->iterations = iter - 1;
      break;
    }

    double lambda = 1.0;
    bool accepted = false;
    for (int halve = 0; halve <= opts.max_halvings; ++halve) {
      const VecZ Zt = lay.unpack(lay.pack(Z) + lambda * dx);
      Eigen::VectorXd Ft;
      try {
        Ft = eval_stack(Zt);
      } catch (const NumericalError&) {
        lambda *= 0.5;  // infeasible trial, shrink toward the current point
        continue;
      }
      if (Ft.norm() < F.norm() || lambda * dx.norm() < opts.step_tol) {
        Z = Zt;
        F = Ft;
        last_move = lambda * dx.norm();
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!accepted) {
      if (F.cwiseAbs().maxCoeff() < opts.residual_tol) {
        converged = true;  // at the noise floor with the system satisfied
        if (report != nullptr) report->iterations = iter;
        break;
      }
      throw ConvergenceError("shooting line search stalled after halvings");
    }
    if (report != nullptr) {
      report->iterations = iter;
      report->residual_norms.push_back(F.cwiseAbs().maxCoeff());
    }
  }
  if (!converged)
    throw ConvergenceError("shooting did not converge within iteration cap");

  for (const auto& filt : filters)
    if (!filt(Z))
      throw ConvergenceError("converged solution rejected by direction filter");
  if (report != nullptr) report->converged = true;
  return Z;
}

}  // namespace quadgait
