#pragma once

// Closed-form reference solutions used as independent oracles in tests.
// Everything here is derived from elementary mechanics (ballistic flight +
// harmonic stance), never from the library's integrator or solver, so
// agreement is evidence rather than tautology.

#include <cmath>
#include <stdexcept>

#include "quadgait/model.hpp"

namespace quadgait::oracles {

enum class VerticalKind { Pronk, Bound };

/// Vertical in-place gaits with legs pinned at alpha = 0: the body is a 1-D
/// point mass alternating between free fall and a linear spring stance.
/// Pronk: both pairs land together (spring 2 k_leg). Bound: pairs alternate
/// (spring k_leg), hind first; apex is revisited between the two stances.
struct VerticalGaitOracle {
  VerticalKind kind;
  ModelParams params;
  double y0;          // apex height
  double t_flight;    // apex -> touchdown
  double v_td;        // speed at touchdown
  double omega;       // stance oscillator frequency
  double y_eq;        // stance equilibrium height
  double amplitude;   // stance oscillation amplitude
  double psi;         // entry phase: y - y_eq = A cos(w t + psi)
  double tau_stance;  // stance duration
  double period;      // full stride
  double t_Htd, t_Hlo, t_Ftd, t_Flo;

  static VerticalGaitOracle make(VerticalKind kind, double apex_height,
                                 const ModelParams& p) {
    if (!(apex_height > p.leg_rest_length))
      throw std::invalid_argument("vertical gait needs an airborne apex");
    VerticalGaitOracle o;
    o.kind = kind;
    o.params = p;
    o.y0 = apex_height;
    const double g = p.gravity;
    const double l0 = p.leg_rest_length;
    o.t_flight = std::sqrt(2.0 * (apex_height - l0) / g);
    o.v_td = g * o.t_flight;
    const double pairs = (kind == VerticalKind::Pronk) ? 2.0 : 1.0;
    const double k = pairs * p.stiffness_abs();
    o.omega = std::sqrt(k / p.body_mass);
    o.y_eq = l0 - p.body_mass * g / k;
    const double delta = l0 - o.y_eq;
    o.amplitude = std::hypot(delta, o.v_td / o.omega);
    o.psi = std::atan2(o.v_td / o.omega, delta);
    o.tau_stance = 2.0 * (M_PI - o.psi) / o.omega;
    if (kind == VerticalKind::Pronk) {
      o.period = 2.0 * o.t_flight + o.tau_stance;
      o.t_Htd = o.t_Ftd = o.t_flight;
      o.t_Hlo = o.t_Flo = o.t_flight + o.tau_stance;
    } else {
      o.period = 4.0 * o.t_flight + 2.0 * o.tau_stance;
      o.t_Htd = o.t_flight;
      o.t_Hlo = o.t_flight + o.tau_stance;
      o.t_Ftd = 3.0 * o.t_flight + o.tau_stance;
      o.t_Flo = 3.0 * o.t_flight + 2.0 * o.tau_stance;
    }
    return o;
  }

  double stance_y(double s) const {
    return y_eq + amplitude * std::cos(omega * s + psi);
  }
  double stance_ydot(double s) const {
    return -amplitude * omega * std::sin(omega * s + psi);
  }

  /// Piecewise height over one stride, t in [0, period].
  double y_at(double t) const {
    const double g = params.gravity;
    const double l0 = params.leg_rest_length;
    if (t < t_Htd) return y0 - 0.5 * g * t * t;
    if (kind == VerticalKind::Pronk) {
      if (t < t_Hlo) return stance_y(t - t_Htd);
      const double s = t - t_Hlo;
      return l0 + v_td * s - 0.5 * g * s * s;
    }
    if (t < t_Hlo) return stance_y(t - t_Htd);
    if (t < t_Ftd) {
      const double s = t - t_Hlo;
      return l0 + v_td * s - 0.5 * g * s * s;
    }
    if (t < t_Flo) return stance_y(t - t_Ftd);
    const double s = t - t_Flo;
    return l0 + v_td * s - 0.5 * g * s * s;
  }

  double ydot_at(double t) const {
    const double g = params.gravity;
    if (t < t_Htd) return -g * t;
    if (kind == VerticalKind::Pronk) {
      if (t < t_Hlo) return stance_ydot(t - t_Htd);
      return v_td - g * (t - t_Hlo);
    }
    if (t < t_Hlo) return stance_ydot(t - t_Htd);
    if (t < t_Ftd) return v_td - g * (t - t_Hlo);
    if (t < t_Flo) return stance_ydot(t - t_Ftd);
    return v_td - g * (t - t_Flo);
  }

  bool in_stance(Leg leg, double t) const {
    if (kind == VerticalKind::Pronk) return t >= t_Htd && t < t_Hlo;
    if (leg == Leg::Hind) return t >= t_Htd && t < t_Hlo;
    return t >= t_Ftd && t < t_Flo;
  }

  double energy() const { return params.body_mass * params.gravity * y0; }

  /// State at the stance oscillation bottom (pronk), with footholds under
  /// the hips.
  HybridState bottom_state() const {
    HybridState s;
    s.q[kQY] = y_eq - amplitude;
    s.phase = {LegPhase::Stance, LegPhase::Stance};
    s.foothold = {params.hip_offset_abs(Leg::Front), params.hip_offset_abs(Leg::Hind)};
    return s;
  }
};

}  // namespace quadgait::oracles
