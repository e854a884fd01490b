#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <string>

#include "quadgait/errors.hpp"

namespace quadgait {

using Vec5 = Eigen::Matrix<double, 5, 1>;

/// Generalized-coordinate slots: q = (x, y, phi, alpha_F, alpha_H).
inline constexpr int kQX = 0;
inline constexpr int kQY = 1;
inline constexpr int kQPhi = 2;
inline constexpr int kQAlphaF = 3;
inline constexpr int kQAlphaH = 4;

enum class Leg { Front = 0, Hind = 1 };

inline constexpr std::array<Leg, 2> kLegs{Leg::Front, Leg::Hind};

inline constexpr int leg_index(Leg leg) { return static_cast<int>(leg); }

/// q-slot of a leg's angle coordinate.
inline constexpr int leg_q_index(Leg leg) {
  return leg == Leg::Front ? kQAlphaF : kQAlphaH;
}

/// Body pitch inertia: either a finite value in M*l_o^2 units or the
/// distinguished infinite mode, in which pitch dynamics are frozen
/// (phi == phi0, phidot == 0) rather than approximated by a large number.
class Inertia {
public:
  static Inertia finite(double value) { return Inertia(value, false); }
  static Inertia infinite() { return Inertia(0.0, true); }

  bool is_infinite() const { return infinite_; }

  /// Finite value; calling this in infinite mode is a logic error.
  double value() const {
    if (infinite_) throw GeometryError("inertia value requested in infinite-J mode");
    return value_;
  }

  bool operator==(const Inertia& o) const {
    return infinite_ == o.infinite_ && (infinite_ || value_ == o.value_);
  }

private:
  Inertia(double value, bool infinite) : value_(value), infinite_(infinite) {}
  double value_;
  bool infinite_;
};

/// All model constants. Dimensionless magnitudes follow the normalization
/// (body_mass, gravity, leg_rest_length); the *_abs accessors produce the
/// dimensional values used by the dynamics, so non-unit normalization bases
/// reproduce the same dimensionless trajectories.
struct ModelParams {
  double body_mass = 1.0;
  double leg_rest_length = 1.0;
  double gravity = 1.0;
  Inertia body_inertia = Inertia::infinite();  // [M l_o^2]
  double leg_pair_stiffness = 20.0;            // [M g / l_o], one spring per pair
  double swing_frequency = std::sqrt(5.0);     // [sqrt(g / l_o)]
  double hip_offset_front = 0.5;               // [l_o], > 0
  double hip_offset_hind = -0.5;               // [l_o], < 0

  void validate() const {
    if (!(body_mass > 0.0)) throw ConfigError("body_mass must be positive");
    if (!(leg_rest_length > 0.0)) throw ConfigError("leg_rest_length must be positive");
    if (!(gravity > 0.0)) throw ConfigError("gravity must be positive");
    if (!(leg_pair_stiffness > 0.0)) throw ConfigError("leg_pair_stiffness must be positive");
    if (!(swing_frequency > 0.0)) throw ConfigError("swing_frequency must be positive");
    if (!(hip_offset_front >= 0.0)) throw ConfigError("hip_offset_front must be non-negative");
    if (!(hip_offset_hind <= 0.0)) throw ConfigError("hip_offset_hind must be non-positive");
    if (!body_inertia.is_infinite() && !(body_inertia.value() > 0.0))
      throw ConfigError("body_inertia must be positive or infinite");
  }

  double hip_offset(Leg leg) const {
    return leg == Leg::Front ? hip_offset_front : hip_offset_hind;
  }

  // Dimensional quantities.
  double hip_offset_abs(Leg leg) const { return hip_offset(leg) * leg_rest_length; }
  double stiffness_abs() const {
    return leg_pair_stiffness * body_mass * gravity / leg_rest_length;
  }
  double swing_frequency_abs() const {
    return swing_frequency * std::sqrt(gravity / leg_rest_length);
  }
  double inertia_abs() const {
    return body_inertia.value() * body_mass * leg_rest_length * leg_rest_length;
  }
  double time_unit() const { return std::sqrt(leg_rest_length / gravity); }
  double speed_unit() const { return std::sqrt(gravity * leg_rest_length); }
  double energy_unit() const { return body_mass * gravity * leg_rest_length; }
};

enum class LegPhase { Swing, Stance };

/// Full hybrid state: body + leg coordinates, per-leg contact phase, and
/// the foothold positions pinning the stance legs.
struct HybridState {
  Vec5 q = Vec5::Zero();
  Vec5 qdot = Vec5::Zero();
  std::array<LegPhase, 2> phase{LegPhase::Swing, LegPhase::Swing};
  std::array<double, 2> foothold{0.0, 0.0};  // defined only in Stance

  double x() const { return q[kQX]; }
  double y() const { return q[kQY]; }
  double pitch() const { return q[kQPhi]; }
  double leg_angle(Leg leg) const { return q[leg_q_index(leg)]; }
  double leg_rate(Leg leg) const { return qdot[leg_q_index(leg)]; }
  LegPhase leg_phase(Leg leg) const { return phase[leg_index(leg)]; }
  bool in_stance(Leg leg) const { return leg_phase(leg) == LegPhase::Stance; }
};

/// Hip pivot height above ground: y + l_b sin(phi).
inline double hip_height(const Vec5& q, Leg leg, const ModelParams& p) {
  return q[kQY] + p.hip_offset_abs(leg) * std::sin(q[kQPhi]);
}

/// Leg length from the state's own angle coordinate,
/// l = (y + l_b sin phi) / cos(alpha + phi).
inline double leg_length_from_state(const Vec5& q, Leg leg, const ModelParams& p) {
  const double c = std::cos(q[leg_q_index(leg)] + q[kQPhi]);
  if (!(c > 0.0))
    throw GeometryError("leg horizontal or inverted: cos(alpha+phi) <= 0");
  return hip_height(q, leg, p) / c;
}

/// World foot position of a leg of length l.
inline Eigen::Vector2d foot_position(const Vec5& q, Leg leg, double l,
                                     const ModelParams& p) {
  const double phi = q[kQPhi];
  const double theta = q[leg_q_index(leg)] + phi;
  const double lb = p.hip_offset_abs(leg);
  return {q[kQX] + lb * std::cos(phi) + l * std::sin(theta),
          q[kQY] + lb * std::sin(phi) - l * std::cos(theta)};
}

struct StanceGeometry {
  double l;
  double alpha;
  double ldot;
  double alphadot;
};

/// Reconstructs the stance-leg geometry from the recorded foothold: alpha
/// solves the foot-position constraint, l from the closed form, rates from
/// the constraint's time derivative with the foot pinned.
inline StanceGeometry leg_geometry_stance(const HybridState& state, Leg leg,
                                          const ModelParams& p) {
  const double phi = state.pitch();
  const double lb = p.hip_offset_abs(leg);
  const double u = state.foothold[leg_index(leg)] - state.x() - lb * std::cos(phi);
  const double v = state.y() + lb * std::sin(phi);
  if (!(v > 0.0)) throw GeometryError("hip at or below ground in stance");
  const double theta = std::atan2(u, v);
  if (!(std::cos(theta) > 0.0))
    throw GeometryError("leg horizontal or inverted: cos(alpha+phi) <= 0");
  const double l = std::hypot(u, v);
  const double udot = -state.qdot[kQX] + lb * std::sin(phi) * state.qdot[kQPhi];
  const double vdot = state.qdot[kQY] + lb * std::cos(phi) * state.qdot[kQPhi];
  const double thetadot = (udot * v - u * vdot) / (l * l);
  const double ldot = (u * udot + v * vdot) / l;
  return {l, theta - phi, ldot, thetadot - state.qdot[kQPhi]};
}

/// Total mechanical energy: gravity + body translation + pitch rotation +
/// stance spring compression. Massless legs store nothing (k_swing -> 0),
/// and stance spring lengths come from the state's own leg angles.
inline double total_energy(const HybridState& state, const ModelParams& p) {
  double e = p.body_mass * p.gravity * state.y() +
             0.5 * p.body_mass *
                 (state.qdot[kQX] * state.qdot[kQX] + state.qdot[kQY] * state.qdot[kQY]);
  if (p.body_inertia.is_infinite()) {
    if (state.qdot[kQPhi] != 0.0)
      throw GeometryError("nonzero pitch rate with infinite inertia");
  } else {
    e += 0.5 * p.inertia_abs() * state.qdot[kQPhi] * state.qdot[kQPhi];
  }
  for (Leg leg : kLegs) {
    if (state.in_stance(leg)) {
      const double d = p.leg_rest_length - leg_length_from_state(state.q, leg, p);
      e += 0.5 * p.stiffness_abs() * d * d;
    }
  }
  return e;
}

}  // namespace quadgait
