#pragma once

// Pseudo-arclength predictor-corrector tracing of one-parameter solution
// families, with turning-point recording, bifurcation detection by singular
// value monitoring of the shooting Jacobian, and branch switching at
// pitchforks.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "quadgait/errors.hpp"
#include "quadgait/gaitlib.hpp"
#include "quadgait/integrate.hpp"
#include "quadgait/model.hpp"
#include "quadgait/shoot.hpp"

namespace quadgait {

enum class SpecialKind { Pitchfork, Turning, Termination };

inline const char* to_string(SpecialKind k) {
  switch (k) {
    case SpecialKind::Pitchfork: return "pitchfork";
    case SpecialKind::Turning: return "turning";
    case SpecialKind::Termination: return "termination";
  }
  return "unknown";
}

struct BranchPoint {
  VecZ Z = VecZ::Zero();
  double energy = 0.0;
  GaitLabel label;
  double leg_min = std::numeric_limits<double>::quiet_NaN();     // over the stride, stance legs
  double peak_rate = std::numeric_limits<double>::quiet_NaN();   // max |qdot| over the stride
  double eq_gap = std::numeric_limits<double>::quiet_NaN();      // stride distance to a static equilibrium
  double sigma_ratio = std::numeric_limits<double>::quiet_NaN(); // 2nd-smallest / largest sv
};

struct SpecialPoint {
  SpecialKind kind = SpecialKind::Turning;
  int index = 0;                   // nearest branch point
  VecZ Z = VecZ::Zero();           // localized solution
  VecZ direction = VecZ::Zero();   // transverse null direction at a pitchfork
  std::string note;
};

struct StopRules {
  int max_points = 4000;
  double min_leg_fraction = 0.015;      // stance over-compression margin, x rest length
  double min_apex = 0.05;
  double max_apex = 25.0;
  double max_speed = 20.0;
  double max_energy = 500.0;
  double equilibrium_gap_tol = 0.12;    // equilibrium_gap below this ends the branch
  bool detect_loop_closure = true;
  std::function<bool(const BranchPoint&)> until;  // caller-supplied stop predicate
};

struct TraceOptions {
  double step = 0.01;                   // arclength step d; also the adaptive cap
  double min_step_factor = 1.0 / 64.0;  // halving floor, relative to step
  int grow_after = 5;                   // easy successes before the step doubles
  bool record_sigma = true;
  bool record_turning_points = true;
  bool reject_multi_oscillation = true; // drop solutions with extra swing cycles
  SolveOptions solver;
};

struct Branch {
  ModelParams params;
  double step = 0.01;
  std::vector<BranchPoint> points;
  std::vector<SpecialPoint> specials;
  std::string stop_reason;
};

namespace detail {

/// Minimum stance leg length over the stride, sampled per contact interval.
inline double min_stance_leg_length(const Trajectory& traj, const ModelParams& p) {
  double lmin = std::numeric_limits<double>::infinity();
  constexpr int kSamples = 48;
  for (const auto& iv : traj.intervals) {
    for (Leg leg : kLegs) {
      if (!iv.phase.contact(leg)) continue;
      const double fh = iv.phase.foothold(leg);
      const double lb = p.hip_offset_abs(leg);
      for (int i = 0; i <= kSamples; ++i) {
        const double t = iv.t0 + (iv.t1 - iv.t0) * static_cast<double>(i) / kSamples;
        const Vec10 y = traj.body_at(t);
        const double u = fh - y[kQX] - lb * std::cos(y[kQPhi]);
        const double v = y[kQY] + lb * std::sin(y[kQPhi]);
        lmin = std::min(lmin, std::hypot(u, v));
      }
    }
  }
  return lmin;
}

inline double peak_generalized_rate(const Trajectory& traj) {
  double peak = 0.0;
  constexpr int kSamples = 96;
  const double t0 = traj.t_begin(), t1 = traj.t_end();
  for (int i = 0; i <= kSamples; ++i) {
    const double t = t0 + (t1 - t0) * static_cast<double>(i) / kSamples;
    peak = std::max(peak, traj.body_at(t).tail<5>().cwiseAbs().maxCoeff());
  }
  return peak;
}

/// Distance of the closest stride instant to a static equilibrium: the
/// minimum over the stride of max(rate, acceleration) in the infinity norm.
/// Near zero only where the orbit grazes a configuration with balanced
/// forces, which is how swing-family branches end (the stride period grows
/// without bound as the orbit sinks onto the equilibrium).
inline double equilibrium_gap(const Trajectory& traj, const ModelParams& p) {
  double best = std::numeric_limits<double>::infinity();
  constexpr int kSamples = 256;
  const double t0 = traj.t_begin(), t1 = traj.t_end();
  for (int i = 0; i <= kSamples; ++i) {
    const double t = t0 + (t1 - t0) * static_cast<double>(i) / kSamples;
    const HybridState s = traj.state_at(t);
    const Vec5 acc = eval_dynamics(s.q, s.qdot, PhaseConfig::from_state(s), p);
    best = std::min(best,
                    std::max(s.qdot.cwiseAbs().maxCoeff(), acc.cwiseAbs().maxCoeff()));
  }
  return best;
}

/// More than two swing-rate sign changes of a leg over its own swing arc
/// marks a multi-oscillation solution.
inline bool has_multi_oscillation(const VecZ& Z, const Trajectory& traj) {
  const double T = Z[kZtStride];
  constexpr int kSamples = 64;
  for (Leg leg : kLegs) {
    const double lo = leg == Leg::Front ? Z[kZtFlo] : Z[kZtHlo];
    const double td = leg == Leg::Front ? Z[kZtFtd] : Z[kZtHtd];
    double a = wrap_time(lo, T);
    double b = wrap_time(td, T);
    if (b <= a) b += T;
    if (b - a < 1e-9 * T) continue;
    const int qdot_idx = 5 + leg_q_index(leg);
    int flips = 0;
    double prev = 0.0;
    for (int i = 0; i <= kSamples; ++i) {
      double t = a + (b - a) * static_cast<double>(i) / kSamples;
      if (t > T) t -= T;
      const double rate = traj.body_at(t)[qdot_idx];
      // Deadband over the null-mode contamination a corrector solution can
      // carry near a resonant singular point (residual_tol / sigma_min, a
      // few 1e-5): without it the symmetric branch itself gets its numerical
      // swing-rate noise counted as oscillations and the trace cannot cross
      // its resonances. Real multi-oscillation children swing at rates of
      // order the switch offset, far above this.
      if (std::abs(rate) < 1e-3) continue;
      const double s = rate > 0.0 ? 1.0 : -1.0;
      if (prev != 0.0 && s != prev) ++flips;
      prev = s;
    }
    if (flips > 2) return true;
  }
  return false;
}

/// Discrete chart of the schedule: the sorted order of the four contact
/// change times plus the two stance wrap bits. Changes exactly when two
/// event times cross (a flight or support interval collapses) or a stance
/// slides across the stride boundary.
inline int schedule_signature(const VecZ& Z) {
  std::array<std::pair<double, int>, 4> ev{{{Z[kZtHtd], 0},
                                            {Z[kZtHlo], 1},
                                            {Z[kZtFtd], 2},
                                            {Z[kZtFlo], 3}}};
  std::sort(ev.begin(), ev.end());
  int sig = 0;
  for (const auto& [t, id] : ev) sig = sig * 4 + id;
  sig = sig * 2 + (Z[kZtHtd] > Z[kZtHlo] ? 1 : 0);
  sig = sig * 2 + (Z[kZtFtd] > Z[kZtFlo] ? 1 : 0);
  return sig;
}

/// Smallest separation between consecutive contact-change times around the
/// stride circle; near zero when the event order is about to change.
inline double min_event_separation(const VecZ& Z) {
  const double T = Z[kZtStride];
  std::array<double, 4> ts{wrap_time(Z[kZtHtd], T), wrap_time(Z[kZtHlo], T),
                           wrap_time(Z[kZtFtd], T), wrap_time(Z[kZtFlo], T)};
  std::sort(ts.begin(), ts.end());
  double g = ts[0] + T - ts[3];
  for (int i = 1; i < 4; ++i) g = std::min(g, ts[i] - ts[i - 1]);
  return g;
}

inline double sigma_ratio_of(const Eigen::MatrixXd& J) {
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(J).singularValues();
  const int n = static_cast<int>(sv.size());
  if (n < 2 || !(sv[0] > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return sv[n - 2] / sv[0];
}

inline BranchPoint make_branch_point(const VecZ& Z, const ModelParams& p,
                                     const Trajectory& traj, double sigma_ratio) {
  BranchPoint bp;
  bp.Z = Z;
  bp.energy = solution_energy(Z, p);
  bp.label = classify(Z, traj, p);
  bp.leg_min = min_stance_leg_length(traj, p);
  bp.peak_rate = peak_generalized_rate(traj);
  bp.eq_gap = equilibrium_gap(traj, p);
  bp.sigma_ratio = sigma_ratio;
  return bp;
}

/// Quadratic interpolation of the three points (s_a, va), (0, vb), (s_c, vc)
/// evaluated at s; s_a < 0 < s_c.
inline double quad_interp(double s, double s_a, double va, double vb, double s_c, double vc) {
  const double la = s * (s - s_c) / (s_a * (s_a - s_c));
  const double lb = (s - s_a) * (s - s_c) / (s_a * s_c);
  const double lc = (s - s_a) * s / (s_c * (s_c - s_a));
  return la * va + lb * vb + lc * vc;
}

}  // namespace detail

/// One predictor-corrector trace. The two seeds fix the initial direction;
/// every accepted point sits at arclength d from its predecessor (enforced
/// exactly by the corrector constraint) and advances along the branch (the
/// direction filter rejects backtracking). The step halves on corrector
/// failure down to step * min_step_factor and recovers after grow_after easy
/// successes. Stop rules append a Termination special where applicable.
inline Branch trace(const VecZ& seed1, const VecZ& seed2, const ModelParams& p,
                    const TraceOptions& topt = {}, const StopRules& rules = {}) {
  p.validate();
  const ActiveLayout lay = ActiveLayout::of(p);
  Branch br;
  br.params = p;
  br.step = topt.step;

  VecZ Zprev = lay.unpack(lay.pack(seed1));
  VecZ Zcur = lay.unpack(lay.pack(seed2));
  for (VecZ* z : {&Zprev, &Zcur}) {
    if (residual(*z, p, topt.solver.integrator).cwiseAbs().maxCoeff() >
        10.0 * topt.solver.residual_tol)
      *z = solve(*z, p, {}, {}, topt.solver);
  }
  if ((lay.pack(Zcur) - lay.pack(Zprev)).norm() < 1e-12)
    throw ConfigError("trace seeds coincide; no initial direction");

  auto integrate_point = [&](const VecZ& z) {
    return integrate_timed(initial_state_of(z, p), schedule_of(z), p, topt.solver.integrator);
  };
  auto seed_sigma = [&](const VecZ& z) {
    return topt.record_sigma ? detail::sigma_ratio_of(jacobian(z, p, topt.solver.integrator))
                             : std::numeric_limits<double>::quiet_NaN();
  };
  br.points.push_back(detail::make_branch_point(Zprev, p, integrate_point(Zprev), seed_sigma(Zprev)));
  br.points.push_back(detail::make_branch_point(Zcur, p, integrate_point(Zcur), seed_sigma(Zcur)));

  double d = topt.step;
  const double d_floor = topt.step * topt.min_step_factor;
  int streak = 0;
  std::string reason;

  while (reason.empty()) {
    if (static_cast<int>(br.points.size()) >= rules.max_points) {
      reason = "max points";
      break;
    }
    Eigen::VectorXd u = lay.pack(Zcur) - lay.pack(Zprev);
    u.normalize();

    bool stepped = false;
    while (!stepped) {
      const VecZ pred = lay.unpack(lay.pack(Zcur) + d * u);
      const Eigen::VectorXd anchor = lay.pack(Zcur);
      auto arclength = [&lay, anchor, d](const VecZ& z) {
        return ((lay.pack(z) - anchor).squaredNorm() - d * d) / (2.0 * d);
      };
      auto forward = [&lay, anchor, u](const VecZ& z) {
        return (lay.pack(z) - anchor).dot(u) > 0.0;
      };
      try {
        SolveReport rep;
        const VecZ Znext = solve(pred, p, {arclength}, {forward}, topt.solver, &rep);
        const Trajectory traj = integrate_point(Znext);
        if (topt.reject_multi_oscillation && detail::has_multi_oscillation(Znext, traj))
          throw ConvergenceError("solution with multiple swing oscillations rejected");
        double sratio = std::numeric_limits<double>::quiet_NaN();
        if (topt.record_sigma && rep.last_jacobian.rows() > 0)
          sratio = detail::sigma_ratio_of(rep.last_jacobian.topRows(lay.residual_count()));
        br.points.push_back(detail::make_branch_point(Znext, p, traj, sratio));
        Zprev = Zcur;
        Zcur = Znext;
        stepped = true;
        if (++streak >= topt.grow_after && d < topt.step) {
          d = std::min(2.0 * d, topt.step);
          streak = 0;
        }
      } catch (const NumericalError&) {
        streak = 0;
        if (d * 0.5 < d_floor * (1.0 - 1e-12)) {
          // A contact-ordering boundary is a derivative kink of the stride
          // map: two event times cross as a flight or support interval
          // collapses, one-sided derivatives differ there, and halving only
          // walks the corrector into the kink. Vault it along the tangent,
          // accepting a point whose event order differs from this side's.
          if (detail::min_event_separation(Zcur) < 0.1) {
            const int sig0 = detail::schedule_signature(Zcur);
            bool vaulted = false;
            for (double mult : {1.0, 2.0, 4.0}) {
              const double s = mult * topt.step;
              const VecZ pred2 = lay.unpack(lay.pack(Zcur) + s * u);
              const Eigen::VectorXd far_anchor = lay.pack(Zcur);
              auto far_arc = [&lay, far_anchor, s](const VecZ& z) {
                return ((lay.pack(z) - far_anchor).squaredNorm() - s * s) / (2.0 * s);
              };
              try {
                const VecZ Znext = solve(pred2, p, {far_arc}, {}, topt.solver);
                if (detail::schedule_signature(Znext) == sig0) continue;
                const Trajectory traj = integrate_point(Znext);
                if (topt.reject_multi_oscillation &&
                    detail::has_multi_oscillation(Znext, traj))
                  continue;
                br.points.push_back(
                    detail::make_branch_point(Znext, p, traj, seed_sigma(Znext)));
                Zprev = Zcur;
                Zcur = Znext;
                vaulted = true;
                break;
              } catch (const NumericalError&) {
              }
            }
            if (vaulted) {
              d = topt.step;
              stepped = true;
              continue;
            }
          }
          reason = "corrector failed at the minimum step";
          // An equilibrium sink stalls the corrector before the gap rule
          // fires: the tangent rotates into the timing entries while the
          // period diverges. Diagnose that ending from the surviving tail,
          // requiring a growing period so a grazing endpoint (flight time
          // shrinking to zero, period shrinking) is not mislabeled.
          const std::size_t m = br.points.size();
          if (m >= 3 && br.points[m - 1].eq_gap < 2.0 * rules.equilibrium_gap_tol &&
              br.points[m - 1].Z[kZtStride] > br.points[m - 2].Z[kZtStride]) {
            SpecialPoint sp;
            sp.kind = SpecialKind::Termination;
            sp.index = static_cast<int>(m) - 1;
            sp.Z = br.points[m - 1].Z;
            sp.note = "orbit approaches an unstable stance equilibrium; stride period diverges";
            br.specials.push_back(sp);
            reason = "stance equilibrium";
          }
          break;
        }
        d *= 0.5;
      }
    }
    if (!stepped) break;

    const int n = static_cast<int>(br.points.size()) - 1;
    const BranchPoint& bp = br.points.back();

    // Turning point: energy direction along the branch reverses.
    if (topt.record_turning_points && n >= 2) {
      const double de1 = br.points[static_cast<std::size_t>(n) - 1].energy -
                         br.points[static_cast<std::size_t>(n) - 2].energy;
      const double de2 = bp.energy - br.points[static_cast<std::size_t>(n) - 1].energy;
      const bool recent = !br.specials.empty() &&
                          br.specials.back().kind == SpecialKind::Turning &&
                          n - br.specials.back().index <= 3;
      if (de1 * de2 < 0.0 && !recent) {
        const Eigen::VectorXd za = lay.pack(br.points[static_cast<std::size_t>(n) - 2].Z);
        const Eigen::VectorXd zb = lay.pack(br.points[static_cast<std::size_t>(n) - 1].Z);
        const Eigen::VectorXd zc = lay.pack(bp.Z);
        const double sa = -(zb - za).norm();
        const double sc = (zc - zb).norm();
        const double ea = br.points[static_cast<std::size_t>(n) - 2].energy;
        const double eb = br.points[static_cast<std::size_t>(n) - 1].energy;
        const double ec = bp.energy;
        // Vertex of the energy parabola in arclength.
        const double denom = ea / (sa * (sa - sc)) + eb / (sa * sc) + ec / (sc * (sc - sa));
        double sv = 0.0;
        if (std::abs(denom) > 0.0) {
          const double lin = -ea * sc / (sa * (sa - sc)) - eb * (sa + sc) / (sa * sc) -
                             ec * sa / (sc * (sc - sa));
          sv = std::clamp(-lin / (2.0 * denom), sa, sc);
        }
        Eigen::VectorXd zv(za.size());
        for (int k = 0; k < za.size(); ++k)
          zv[k] = detail::quad_interp(sv, sa, za[k], zb[k], sc, zc[k]);
        Eigen::VectorXd ut = zc - za;
        ut.normalize();
        SpecialPoint sp;
        sp.kind = SpecialKind::Turning;
        sp.index = n - 1;
        sp.note = "energy direction reversal";
        try {
          auto plane = [&lay, zv, ut](const VecZ& z) { return (lay.pack(z) - zv).dot(ut); };
          sp.Z = solve(lay.unpack(zv), p, {plane}, {}, topt.solver);
        } catch (const NumericalError&) {
          sp.Z = lay.unpack(zv);
          sp.note += "; vertex polish failed, interpolated point kept";
        }
        br.specials.push_back(sp);
      }
    }

    // Over-compression termination: walk the remaining branch with shrinking
    // steps down to the integrable stance floor, then extrapolate the leg
    // length margin to zero for the end point.
    if (bp.leg_min < rules.min_leg_fraction * p.leg_rest_length) {
      const double floor_margin = 1.05 * kMinLegFraction * p.leg_rest_length;
      double ds = 0.5 * d;
      for (int tries = 0; tries < 48 && br.points.back().leg_min > floor_margin; ++tries) {
        if (ds < 0.25 * d_floor) break;
        const Eigen::VectorXd zl = lay.pack(br.points.back().Z);
        Eigen::VectorXd ur = zl - lay.pack(br.points[br.points.size() - 2].Z);
        ur.normalize();
        auto arc = [&lay, zl, ds](const VecZ& z) {
          return ((lay.pack(z) - zl).squaredNorm() - ds * ds) / (2.0 * ds);
        };
        auto fwd = [&lay, zl, ur](const VecZ& z) { return (lay.pack(z) - zl).dot(ur) > 0.0; };
        try {
          SolveReport rep;
          const VecZ Zr = solve(lay.unpack(zl + ds * ur), p, {arc}, {fwd}, topt.solver, &rep);
          const Trajectory traj = integrate_point(Zr);
          double sratio = std::numeric_limits<double>::quiet_NaN();
          if (topt.record_sigma && rep.last_jacobian.rows() > 0)
            sratio = detail::sigma_ratio_of(rep.last_jacobian.topRows(lay.residual_count()));
          BranchPoint refined = detail::make_branch_point(Zr, p, traj, sratio);
          if (refined.leg_min >= br.points.back().leg_min) break;
          br.points.push_back(refined);
        } catch (const NumericalError&) {
          ds *= 0.5;
        }
      }

      SpecialPoint sp;
      sp.kind = SpecialKind::Termination;
      sp.index = static_cast<int>(br.points.size()) - 1;
      sp.Z = br.points.back().Z;
      sp.note = "stance leg over-compression";
      const std::size_t m = br.points.size();
      const double mb = br.points[m - 2].leg_min;
      const double mc = br.points[m - 1].leg_min;
      if (m >= 3 && mb > mc) {
        const Eigen::VectorXd za = lay.pack(br.points[m - 3].Z);
        const Eigen::VectorXd zb = lay.pack(br.points[m - 2].Z);
        const Eigen::VectorXd zc = lay.pack(br.points[m - 1].Z);
        const double sa = -(zb - za).norm();
        const double sc = (zc - zb).norm();
        const double ma = br.points[m - 3].leg_min;
        // Quadratic margin model through the last three points; first root
        // past the end is the fully compressed limit.
        const double A = ma / (sa * (sa - sc)) + mb / (sa * sc) + mc / (sc * (sc - sa));
        const double B = -ma * sc / (sa * (sa - sc)) - mb * (sa + sc) / (sa * sc) -
                         mc * sa / (sc * (sc - sa));
        double szero = sc + mc * sc / (mb - mc);
        const double disc = B * B - 4.0 * A * mb;
        if (std::abs(A) > 1e-12 && disc >= 0.0) {
          const double r1 = (-B - std::sqrt(disc)) / (2.0 * A);
          const double r2 = (-B + std::sqrt(disc)) / (2.0 * A);
          double best = std::numeric_limits<double>::infinity();
          for (double r : {r1, r2})
            if (r > sc && r < best) best = r;
          // The curvature estimate is trustworthy only near the sampled
          // window; a far root means the quadratic is noise-dominated and
          // the secant root is the better model.
          if (std::isfinite(best) && best <= sc + 2.0 * (sc - sa)) szero = best;
        }
        Eigen::VectorXd zv(za.size());
        for (int k = 0; k < za.size(); ++k)
          zv[k] = detail::quad_interp(szero, sa, za[k], zb[k], sc, zc[k]);
        sp.Z = lay.unpack(zv);
        sp.note += "; end point extrapolated to zero leg length";
      } else if (mb > mc && std::isfinite(mb)) {
        const double f = mc / (mb - mc);
        sp.Z = lay.unpack(lay.pack(br.points[m - 1].Z) +
                          f * (lay.pack(br.points[m - 1].Z) - lay.pack(br.points[m - 2].Z)));
        sp.note += "; end point extrapolated to zero leg length";
      }
      br.specials.push_back(sp);
      reason = "leg over-compression";
      break;
    }

    // The orbit grazes a static stance equilibrium; the branch ends there
    // with the stride period growing without bound.
    if (bp.eq_gap < rules.equilibrium_gap_tol) {
      SpecialPoint sp;
      sp.kind = SpecialKind::Termination;
      sp.index = n;
      sp.Z = bp.Z;
      sp.note = "orbit reaches an unstable stance equilibrium";
      br.specials.push_back(sp);
      reason = "stance equilibrium";
      break;
    }

    if (bp.Z[kZy0] < rules.min_apex || bp.Z[kZy0] > rules.max_apex ||
        std::abs(bp.Z[kZxdot0]) > rules.max_speed || bp.energy > rules.max_energy) {
      reason = "state bounds";
      break;
    }
    if (rules.until && rules.until(bp)) {
      reason = "until rule";
      break;
    }
    if (rules.detect_loop_closure && n > 10 &&
        (lay.pack(bp.Z) - lay.pack(br.points.front().Z)).norm() < topt.step) {
      reason = "loop closed";
      break;
    }
  }

  br.stop_reason = reason;
  return br;
}

struct DetectOptions {
  double sigma_threshold = 1e-4;  // null-direction criterion at the located point
  double locate_tol = 1e-6;       // on ||dZ|| between refinement iterates
  int max_evaluations = 24;
  double dip_prominence = 0.35;   // local minimum depth against +-2 neighbors
  SolveOptions solver;
};

/// Scans the singular-value ratio along the branch for V-shaped dips, then
/// localizes each by corrector solves constrained to hyperplanes transverse
/// to the branch, minimizing the second-smallest singular value. Localized
/// points below the null threshold are appended as pitchforks (with their
/// transverse null direction); dips that fail the threshold are recorded in
/// the note of a returned point but not appended.
inline std::vector<SpecialPoint> detect_bifurcations(Branch& br, const ModelParams& p,
                                                     const DetectOptions& dopt = {}) {
  const ActiveLayout lay = ActiveLayout::of(p);
  const int npts = static_cast<int>(br.points.size());
  std::vector<SpecialPoint> found;
  if (npts < 5) return found;

  for (auto& bp : br.points)
    if (!std::isfinite(bp.sigma_ratio))
      bp.sigma_ratio = detail::sigma_ratio_of(jacobian(bp.Z, p, dopt.solver.integrator));

  auto ratio = [&](int i) { return br.points[static_cast<std::size_t>(i)].sigma_ratio; };

  for (int i = 2; i < npts - 2; ++i) {
    const bool local_min = ratio(i) <= ratio(i - 1) && ratio(i) <= ratio(i + 1);
    const double shoulder = std::max(ratio(i - 2), ratio(i + 2));
    if (!local_min || !(ratio(i) < dopt.dip_prominence * shoulder)) continue;

    // Refine inside [i-1, i+1]: s is arclength relative to point i, the
    // corrector is confined to hyperplanes normal to the local tangent.
    const Eigen::VectorXd za = lay.pack(br.points[static_cast<std::size_t>(i) - 1].Z);
    const Eigen::VectorXd zb = lay.pack(br.points[static_cast<std::size_t>(i)].Z);
    const Eigen::VectorXd zc = lay.pack(br.points[static_cast<std::size_t>(i) + 1].Z);
    Eigen::VectorXd ut = zc - za;
    ut.normalize();
    const double sa = -(zb - za).norm();
    const double sc = (zc - zb).norm();

    struct Sample {
      double s;
      double sigma;
      VecZ Z;
    };
    auto eval = [&](double s) -> Sample {
      Eigen::VectorXd z0(zb.size());
      if (s <= 0.0)
        z0 = zb + (s / sa) * (za - zb);
      else
        z0 = zb + (s / sc) * (zc - zb);
      auto plane = [&lay, z0, ut](const VecZ& z) { return (lay.pack(z) - z0).dot(ut); };
      const VecZ Zs = solve(lay.unpack(z0), p, {plane}, {}, dopt.solver);
      const Eigen::MatrixXd J = jacobian(Zs, p, dopt.solver.integrator);
      const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(J).singularValues();
      return {s, sv[sv.size() - 2], Zs};
    };

    SpecialPoint sp;
    sp.kind = SpecialKind::Pitchfork;
    sp.index = i;
    int evals = 0;
    bool located = false;
    try {
      Sample A = eval(sa), B = eval(0.0), C = eval(sc);
      evals = 3;
      while (evals < dopt.max_evaluations) {
        // Vertex of the parabola through the squared singular values; the
        // transversal eigenvalue crosses zero linearly, so sigma^2 is close
        // to a parabola with its minimum at the bifurcation.
        const double qa = A.sigma * A.sigma, qb = B.sigma * B.sigma, qc = C.sigma * C.sigma;
        const double den = qa / ((A.s - B.s) * (A.s - C.s)) + qb / ((B.s - A.s) * (B.s - C.s)) +
                           qc / ((C.s - A.s) * (C.s - B.s));
        double s_new;
        if (den > 0.0) {
          const double lin = -qa * (B.s + C.s) / ((A.s - B.s) * (A.s - C.s)) -
                             qb * (A.s + C.s) / ((B.s - A.s) * (B.s - C.s)) -
                             qc * (A.s + B.s) / ((C.s - A.s) * (C.s - B.s));
          s_new = std::clamp(-lin / (2.0 * den), A.s, C.s);
        } else {
          s_new = 0.5 * (A.s + C.s);
        }
        const Sample N = eval(s_new);
        ++evals;
        const Sample prev_best = std::min({A, B, C}, [](const Sample& x, const Sample& y) {
          return x.sigma < y.sigma;
        });
        // Keep the best three samples bracketing the minimum.
        std::vector<Sample> all{A, B, C, N};
        std::sort(all.begin(), all.end(),
                  [](const Sample& x, const Sample& y) { return x.s < y.s; });
        int best = 0;
        for (int k = 1; k < 4; ++k)
          if (all[static_cast<std::size_t>(k)].sigma < all[static_cast<std::size_t>(best)].sigma)
            best = k;
        const int lo = std::clamp(best - 1, 0, 1);
        A = all[static_cast<std::size_t>(lo)];
        B = all[static_cast<std::size_t>(lo) + 1];
        C = all[static_cast<std::size_t>(lo) + 2];
        const Sample now_best = std::min({A, B, C}, [](const Sample& x, const Sample& y) {
          return x.sigma < y.sigma;
        });
        if ((lay.pack(now_best.Z) - lay.pack(prev_best.Z)).norm() < dopt.locate_tol) {
          sp.Z = now_best.Z;
          located = true;
          break;
        }
      }
      if (!located) {
        const Sample best = std::min({A, B, C}, [](const Sample& x, const Sample& y) {
          return x.sigma < y.sigma;
        });
        sp.Z = best.Z;
        sp.note = "localization hit the evaluation cap; point is the best sample";
      }
    } catch (const NumericalError& e) {
      sp.Z = br.points[static_cast<std::size_t>(i)].Z;
      sp.note = std::string("localization corrector failed: ") + e.what();
      found.push_back(sp);
      continue;
    }

    // Null-direction confirmation at the located point.
    const Eigen::MatrixXd J = jacobian(sp.Z, p, dopt.solver.integrator);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(J, Eigen::ComputeThinV);
    const Eigen::VectorXd sv = svd.singularValues();
    const int na = static_cast<int>(sv.size());
    if (!(sv[na - 2] < dopt.sigma_threshold * sv[0])) {
      sp.note = "dip did not reach the null threshold at the located point";
      found.push_back(sp);
      continue;
    }
    // Both smallest singular values vanish at the pitchfork (branch tangent
    // plus the genuinely new direction), so the two right singular vectors
    // span the null plane in an arbitrary rotation. Take the combination
    // orthogonal to the branch tangent.
    const Eigen::VectorXd v1 = svd.matrixV().col(na - 1);
    const Eigen::VectorXd v2 = svd.matrixV().col(na - 2);
    const double a1 = v1.dot(ut), a2 = v2.dot(ut);
    Eigen::VectorXd v = std::hypot(a1, a2) > 0.1 ? (-a2 * v1 + a1 * v2).eval() : v2;
    v -= v.dot(ut) * ut;
    if (v.norm() < 0.1) {
      sp.note = "null direction nearly parallel to the branch tangent";
      found.push_back(sp);
      continue;
    }
    v.normalize();
    sp.direction = lay.unpack(v);
    br.specials.push_back(sp);
    found.push_back(sp);
  }
  std::sort(br.specials.begin(), br.specials.end(),
            [](const SpecialPoint& a, const SpecialPoint& b) { return a.index < b.index; });
  return found;
}

struct SwitchOptions {
  double epsilon_factor = 10.0;  // initial offset = factor * branch step
  int max_escalations = 3;
  SolveOptions solver;
};

/// Seeds the branch emerging at a pitchfork: corrects Z* + side*eps*v and
/// Z* + side*2*eps*v with the projection onto the transverse null direction
/// pinned, so the corrector cannot slide back onto the parent branch. Returns
/// the two seeds ordered away from the parent, ready for trace().
inline std::pair<VecZ, VecZ> switch_branch(const Branch& br, const SpecialPoint& bif,
                                           const ModelParams& p, int side = 1,
                                           const SwitchOptions& sopt = {}) {
  if (bif.kind != SpecialKind::Pitchfork)
    throw ConfigError("branch switching requires a pitchfork special point");
  if (side != 1 && side != -1) throw ConfigError("switch side must be +1 or -1");
  const ActiveLayout lay = ActiveLayout::of(p);
  Eigen::VectorXd v = lay.pack(bif.direction);
  if (v.norm() < 1e-12)
    throw ConfigError("pitchfork point carries no transverse null direction");

  // Remove any leftover component along the parent tangent.
  const int i = std::clamp(bif.index, 1, static_cast<int>(br.points.size()) - 2);
  Eigen::VectorXd ut = lay.pack(br.points[static_cast<std::size_t>(i) + 1].Z) -
                       lay.pack(br.points[static_cast<std::size_t>(i) - 1].Z);
  ut.normalize();
  v -= v.dot(ut) * ut;
  if (v.norm() < 1e-6)
    throw ConvergenceError("transverse direction degenerate against the parent tangent");
  v.normalize();

  const Eigen::VectorXd z0 = lay.pack(bif.Z);
  double eps = sopt.epsilon_factor * br.step;
  std::string last_error = "no attempt made";
  for (int esc = 0; esc <= sopt.max_escalations; ++esc, eps *= 2.0) {
    try {
      auto seed_at = [&](double offset) {
        auto proj = [&lay, z0, v, offset](const VecZ& z) {
          return (lay.pack(z) - z0).dot(v) - offset;
        };
        const VecZ s = solve(lay.unpack(z0 + offset * v), p, {proj}, {}, sopt.solver);
        if ((lay.pack(s) - z0).norm() > 4.0 * std::abs(offset))
          throw ConvergenceError("switched seed ran far along the parent branch");
        return s;
      };
      const VecZ s1 = seed_at(side * eps);
      const VecZ s2 = seed_at(side * 2.0 * eps);
      return {s1, s2};
    } catch (const NumericalError& e) {
      last_error = e.what();
    }
  }
  throw ConvergenceError(std::string("branch switching failed after offset escalation: ") +
                         last_error);
}

}  // namespace quadgait
