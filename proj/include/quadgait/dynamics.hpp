#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>

#include "quadgait/errors.hpp"
#include "quadgait/model.hpp"

namespace quadgait {

/// Fraction of l_o below which a stance spring counts as fully compressed
/// and the model leaves its domain of validity.
inline constexpr double kMinLegFraction = 0.01;

/// Contact configuration over one smooth interval of the hybrid flow.
struct PhaseConfig {
  bool front_contact = false;
  bool hind_contact = false;
  double foothold_front = 0.0;
  double foothold_hind = 0.0;

  bool contact(Leg leg) const {
    return leg == Leg::Front ? front_contact : hind_contact;
  }
  double foothold(Leg leg) const {
    return leg == Leg::Front ? foothold_front : foothold_hind;
  }
  void set_contact(Leg leg, bool on, double foothold = 0.0) {
    if (leg == Leg::Front) {
      front_contact = on;
      foothold_front = foothold;
    } else {
      hind_contact = on;
      foothold_hind = foothold;
    }
  }

  static PhaseConfig from_state(const HybridState& s) {
    PhaseConfig c;
    for (Leg leg : kLegs)
      if (s.in_stance(leg)) c.set_contact(leg, true, s.foothold[leg_index(leg)]);
    return c;
  }
};

/// Leg-extension event function: y + l_b sin(phi) - l_o cos(phi + alpha).
/// Zero exactly when the leg is at rest length with its foot on the ground,
/// which is both the touch-down and the lift-off condition. For a swing leg
/// this is the foot height; for a stance leg it equals cos(theta) (l - l_o).
inline double extension_residual(const Vec5& q, Leg leg, const ModelParams& p) {
  return hip_height(q, leg, p) -
         p.leg_rest_length * std::cos(q[kQPhi] + q[leg_q_index(leg)]);
}

inline std::array<double, 2> event_residuals(const Vec5& q, const ModelParams& p) {
  return {extension_residual(q, Leg::Front, p), extension_residual(q, Leg::Hind, p)};
}

/// Hybrid vector field. Assembles the coupled linear system in
/// (xdd, ydd, phidd, alphadd_F, alphadd_H) and solves it in one shot:
///   - body rows: M xdd = F_x, M ydd = F_y - M g, J phidd = tau
///     (phidd = 0 identically in infinite-J mode),
///   - swing rows: hip-pendulum equation driven by the hip acceleration,
///     restoring term omega_swing^2 alpha in the massless limit,
///   - stance rows: second time-derivative of the pinned-foot constraint.
/// Stance spring forces act foot-to-hip with magnitude k_leg (l_o - l_i).
inline Vec5 eval_dynamics(const Vec5& q, const Vec5& qdot, const PhaseConfig& phase,
                          const ModelParams& p) {
  const double M = p.body_mass;
  const double g = p.gravity;
  const double l0 = p.leg_rest_length;
  const double phi = q[kQPhi];
  const double sphi = std::sin(phi), cphi = std::cos(phi);
  const double phidot = qdot[kQPhi];

  // Net stance force and pitch moment; positions only, so the body rows
  // decouple from the accelerations.
  double fx = 0.0, fy = 0.0, tau = 0.0;
  for (Leg leg : kLegs) {
    if (!phase.contact(leg)) continue;
    const double lb = p.hip_offset_abs(leg);
    const double alpha = q[leg_q_index(leg)];
    const double theta = alpha + phi;
    const double c = std::cos(theta), s = std::sin(theta);
    if (!(c > 0.0)) throw GeometryError("stance leg horizontal or inverted");
    const double v = q[kQY] + lb * sphi;
    const double l = v / c;
    if (l < kMinLegFraction * l0)
      throw GeometryError("stance spring fully compressed (l < 0.01 l_o)");
    const double f = p.stiffness_abs() * (l0 - l);
    fx += -f * s;
    fy += f * c;
    tau += f * lb * std::cos(alpha);
  }

  Eigen::Matrix<double, 5, 5> A = Eigen::Matrix<double, 5, 5>::Zero();
  Vec5 b = Vec5::Zero();
  A(kQX, kQX) = M;
  b[kQX] = fx;
  A(kQY, kQY) = M;
  b[kQY] = fy - M * g;
  if (p.body_inertia.is_infinite()) {
    A(kQPhi, kQPhi) = 1.0;
    b[kQPhi] = 0.0;
  } else {
    A(kQPhi, kQPhi) = p.inertia_abs();
    b[kQPhi] = tau;
  }

  for (Leg leg : kLegs) {
    const int row = leg_q_index(leg);
    const double lb = p.hip_offset_abs(leg);
    const double alpha = q[row];
    const double theta = alpha + phi;
    const double c = std::cos(theta), s = std::sin(theta);
    A(row, row) = 1.0;
    if (!phase.contact(leg)) {
      // alphadd + (1 + (l_b/l_o) sin alpha) phidd + (c/l_o) xdd + (s/l_o) ydd
      //   = (l_b/l_o) phidot^2 cos alpha - (s/l_o) g - omega^2 alpha
      const double w = p.swing_frequency_abs();
      A(row, kQX) = c / l0;
      A(row, kQY) = s / l0;
      A(row, kQPhi) = 1.0 + (lb / l0) * std::sin(alpha);
      b[row] = (lb / l0) * phidot * phidot * std::cos(alpha) - (s / l0) * g -
               w * w * alpha;
    } else {
      // Second derivative of the pinned-foot constraint, expressed in the
      // state's own (theta, thetadot); v = hip height.
      const double v = q[kQY] + lb * sphi;
      if (!(v > 0.0)) throw GeometryError("stance hip at or below ground");
      const double t = s / c;
      const double vdot = qdot[kQY] + lb * cphi * phidot;
      const double thetadot = qdot[row] + phidot;
      const double c2v = c * c / v;
      A(row, kQX) = c2v;
      A(row, kQY) = c2v * t;
      A(row, kQPhi) = 1.0 - c2v * lb * (sphi - t * cphi);
      b[row] = c2v * lb * (cphi + t * sphi) * phidot * phidot -
               2.0 * vdot * thetadot / v - 2.0 * t * thetadot * thetadot;
    }
  }

  const Vec5 qdd = A.partialPivLu().solve(b);
  if (!qdd.allFinite()) throw GeometryError("singular acceleration system");
  return qdd;
}

/// Touch-down map: positions and body velocities pass through; the landing
/// leg's angular rate is replaced by the unique value pinning the foot
/// (time derivative of the foot-position constraint), and the foothold is
/// recorded. Only massless-leg coordinates change, so body energy is
/// conserved exactly.
inline HybridState touchdown_reset(const HybridState& state, Leg leg,
                                   const ModelParams& p) {
  const double phi = state.pitch();
  const double sphi = std::sin(phi), cphi = std::cos(phi);
  const double lb = p.hip_offset_abs(leg);
  const double alpha = state.leg_angle(leg);
  const double theta = alpha + phi;
  const double c = std::cos(theta), s = std::sin(theta);
  if (!(c > 0.0)) throw GeometryError("touch-down with leg horizontal or inverted");
  const double v = state.y() + lb * sphi;
  const double vdot = state.qdot[kQY] + lb * cphi * state.qdot[kQPhi];

  // Foot height rate with the leg still at rest length.
  const double foot_ydot = vdot + p.leg_rest_length * s * (state.leg_rate(leg) + state.qdot[kQPhi]);
  if (foot_ydot > 1e-9) throw EventError("touch-down with foot moving upward");

  const double thetadot_post =
      -(c * c / v) * (state.qdot[kQX] - lb * sphi * state.qdot[kQPhi]) -
      (c * s / v) * vdot;

  HybridState out = state;
  out.qdot[leg_q_index(leg)] = thetadot_post - state.qdot[kQPhi];
  out.phase[leg_index(leg)] = LegPhase::Stance;
  out.foothold[leg_index(leg)] = state.x() + lb * cphi + v * (s / c);
  return out;
}

/// Lift-off map: the leg simply leaves the ground, all velocities continuous.
inline HybridState liftoff(const HybridState& state, Leg leg) {
  HybridState out = state;
  out.phase[leg_index(leg)] = LegPhase::Swing;
  return out;
}

}  // namespace quadgait
