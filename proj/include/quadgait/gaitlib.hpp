#pragma once

// Analytic seed gaits, classification of periodic solutions into the gait
// taxonomy, and the symmetry / correspondence checks built on the shooting
// residual. Everything here is a pure function of a solution vector plus
// model parameters.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "quadgait/dynamics.hpp"
#include "quadgait/errors.hpp"
#include "quadgait/integrate.hpp"
#include "quadgait/model.hpp"
#include "quadgait/shoot.hpp"

namespace quadgait {

/// Gait taxonomy. PP/BP are the vertical in-place gaits, PE/PG the in-place
/// pronking variants with swinging legs, PF forward pronking, BG/BE bounding
/// with a single gathered or extended suspension, B2 bounding with two
/// suspensions.
enum class GaitKind { PP, BP, PE, PG, PF, BG, BE, B2, Unknown };

/// Airborne-phase descriptor attached to a classification.
enum class Suspension { None, Gathered, Extended, Two };

inline const char* to_string(GaitKind k) {
  switch (k) {
    case GaitKind::PP: return "PP";
    case GaitKind::BP: return "BP";
    case GaitKind::PE: return "PE";
    case GaitKind::PG: return "PG";
    case GaitKind::PF: return "PF";
    case GaitKind::BG: return "BG";
    case GaitKind::BE: return "BE";
    case GaitKind::B2: return "B2";
    default: return "UNKNOWN";
  }
}

inline const char* to_string(Suspension s) {
  switch (s) {
    case Suspension::None: return "none";
    case Suspension::Gathered: return "gathered";
    case Suspension::Extended: return "extended";
    case Suspension::Two: return "two";
  }
  return "none";
}

struct GaitLabel {
  GaitKind kind = GaitKind::Unknown;
  Suspension suspension = Suspension::None;
  std::string note;  // nonempty only for Unknown, says why
};

// Classification thresholds. Synchronization is relative to the stride time;
// exact solutions of the synchronized families satisfy it to roundoff.
inline constexpr double kSyncTolerance = 1e-6;       // x t_stride
inline constexpr double kSpeedTolerance = 1e-6;      // x speed unit
inline constexpr double kApexGapTolerance = 1e-6;    // rad, posture at apex
inline constexpr double kGapTrendTolerance = 1e-9;   // rad, over a suspension

/// Closed-form vertical gait: ballistic flight plus a harmonic stance
/// oscillation about the loaded spring equilibrium. PP loads both pairs
/// together; BP staggers hind and front stance half a stride apart, hind
/// first. The result satisfies the shooting residual to integrator accuracy
/// without any Newton polish.
inline VecZ seed_vertical_gait(GaitKind kind, double apex_height, const ModelParams& p) {
  p.validate();
  if (kind != GaitKind::PP && kind != GaitKind::BP)
    throw ConfigError("seed_vertical_gait builds PP and BP gaits only");
  const double l0 = p.leg_rest_length;
  const double g = p.gravity;
  const double M = p.body_mass;
  const int pairs = kind == GaitKind::PP ? 2 : 1;
  // Fully compressing the loaded springs bounds the recoverable apex height:
  // M g y_max = k_tot l0^2 / 2.
  const double apex_max = 0.5 * pairs * p.leg_pair_stiffness * l0;
  if (!(apex_height > l0) || !(apex_height < apex_max))
    throw ConfigError("vertical seed apex height outside the feasible range");

  const double k_tot = pairs * p.stiffness_abs();
  const double t_flight = std::sqrt(2.0 * (apex_height - l0) / g);  // apex to touchdown
  const double v_td = g * t_flight;
  const double omega = std::sqrt(k_tot / M);
  const double y_eq = l0 - M * g / k_tot;
  // y(s) = y_eq + A cos(omega s + psi) during stance, entered at y = l0 with
  // ydot = -v_td and left symmetrically at ydot = +v_td.
  const double amplitude = std::hypot(l0 - y_eq, v_td / omega);
  const double psi = std::atan2(v_td / omega, l0 - y_eq);
  const double tau = 2.0 * (std::numbers::pi - psi) / omega;
  (void)amplitude;

  VecZ Z = VecZ::Zero();
  Z[kZy0] = apex_height;
  if (kind == GaitKind::PP) {
    Z[kZtHtd] = t_flight;
    Z[kZtFtd] = t_flight;
    Z[kZtHlo] = t_flight + tau;
    Z[kZtFlo] = t_flight + tau;
    Z[kZtStride] = 2.0 * t_flight + tau;
  } else {
    Z[kZtHtd] = t_flight;
    Z[kZtHlo] = t_flight + tau;
    Z[kZtFtd] = 3.0 * t_flight + tau;
    Z[kZtFlo] = 3.0 * t_flight + 2.0 * tau;
    Z[kZtStride] = 4.0 * t_flight + 2.0 * tau;
  }
  return Z;
}

namespace detail {

inline double wrap_time(double t, double period) {
  double w = std::fmod(t, period);
  if (w < 0.0) w += period;
  return w;
}

/// Membership in the wrapped stance arc [td, lo) on the stride circle.
inline bool stance_contains(double t, double td, double lo, double period) {
  td = wrap_time(td, period);
  lo = wrap_time(lo, period);
  if (lo >= td) return t >= td && t < lo;
  return t >= td || t < lo;
}

/// Connected airborne arcs of the stride circle, as [a, b] with a in [0, T)
/// and b possibly beyond T for arcs that wrap through the stride start.
inline std::vector<std::pair<double, double>> flight_arcs(const EventSchedule& s) {
  const double T = s.t_stride;
  std::array<double, 4> ev{wrap_time(s.t_Htd, T), wrap_time(s.t_Hlo, T),
                           wrap_time(s.t_Ftd, T), wrap_time(s.t_Flo, T)};
  std::sort(ev.begin(), ev.end());
  std::vector<double> bounds;
  for (double e : ev)
    if (bounds.empty() || e - bounds.back() > 1e-9 * T) bounds.push_back(e);
  if (bounds.size() > 1 && (bounds.front() + T) - bounds.back() <= 1e-9 * T) bounds.pop_back();

  std::vector<std::pair<double, double>> arcs;
  const int n = static_cast<int>(bounds.size());
  for (int i = 0; i < n; ++i) {
    const double a = bounds[static_cast<std::size_t>(i)];
    const double b = (i + 1 < n) ? bounds[static_cast<std::size_t>(i) + 1] : bounds.front() + T;
    const double mid = wrap_time(0.5 * (a + b), T);
    const bool contact = stance_contains(mid, s.t_Htd, s.t_Hlo, T) ||
                         stance_contains(mid, s.t_Ftd, s.t_Flo, T);
    if (!contact) arcs.emplace_back(a, b);
  }
  return arcs;
}

inline double leg_gap_at(const Trajectory& traj, double t, double period) {
  double tt = t;
  if (tt > period) tt -= period;  // wrapped arc endpoint; periodic orbit
  const Vec10 y = traj.body_at(tt);
  return y[kQAlphaF] - y[kQAlphaH];
}

}  // namespace detail

/// Decision tree over the solution structure. Synchronization and forward
/// speed split the families; the airborne decomposition of the stride circle
/// separates single- from two-suspension bounding, and the front-hind leg
/// gap trend over a single suspension separates gathering from extending.
/// Postures are read anatomically: a positive front-hind gap means legs
/// stretched outward, a negative one legs tucked under the body.
inline GaitLabel classify(const VecZ& Z, const Trajectory& traj, const ModelParams& p) {
  const double T = Z[kZtStride];
  if (!(T > 0.0) || !std::isfinite(T))
    return {GaitKind::Unknown, Suspension::None, "non-positive stride time"};

  const double sync_tol = kSyncTolerance * T;
  const bool sync = std::abs(Z[kZtHtd] - Z[kZtFtd]) < sync_tol &&
                    std::abs(Z[kZtHlo] - Z[kZtFlo]) < sync_tol;
  const bool in_place = std::abs(Z[kZxdot0]) < kSpeedTolerance * p.speed_unit();

  if (in_place && sync) {
    const double apex_gap = Z[kZalphaF0] - Z[kZalphaH0];
    if (apex_gap > kApexGapTolerance) return {GaitKind::PE, Suspension::Extended, {}};
    if (apex_gap < -kApexGapTolerance) return {GaitKind::PG, Suspension::Gathered, {}};
    return {GaitKind::PP, Suspension::None, {}};
  }
  if (in_place) return {GaitKind::BP, Suspension::Two, {}};
  if (sync) return {GaitKind::PF, Suspension::None, {}};

  const auto arcs = detail::flight_arcs(schedule_of(Z));
  if (arcs.size() >= 2) return {GaitKind::B2, Suspension::Two, {}};
  if (arcs.empty())
    return {GaitKind::Unknown, Suspension::None, "staggered gait with no airborne phase"};

  const double gap_start = detail::leg_gap_at(traj, arcs.front().first, T);
  const double gap_end = detail::leg_gap_at(traj, arcs.front().second, T);
  const double trend = gap_end - gap_start;
  if (trend < -kGapTrendTolerance) return {GaitKind::BG, Suspension::Gathered, {}};
  if (trend > kGapTrendTolerance) return {GaitKind::BE, Suspension::Extended, {}};
  return {GaitKind::Unknown, Suspension::None, "single suspension with no leg gap trend"};
}

inline GaitLabel classify(const VecZ& Z, const ModelParams& p,
                          const IntegratorOptions& opts = {}) {
  const Trajectory traj = integrate_timed(initial_state_of(Z, p), schedule_of(Z), p, opts);
  return classify(Z, traj, p);
}

/// Travel-direction mirror composed with the front/hind pair exchange.
/// With mirror-symmetric hip offsets this maps solutions to solutions at any
/// body inertia; it reverses the travel direction, so forward pronking maps
/// to backward pronking.
inline VecZ mirror_exchange(const VecZ& Z) {
  VecZ out = Z;
  out[kZphi0] = -Z[kZphi0];
  out[kZalphaF0] = -Z[kZalphaH0];
  out[kZalphaH0] = -Z[kZalphaF0];
  out[kZxdot0] = -Z[kZxdot0];
  out[kZphidot0] = -Z[kZphidot0];
  out[kZalphadotF0] = -Z[kZalphadotH0];
  out[kZalphadotH0] = -Z[kZalphadotF0];
  out[kZtHtd] = Z[kZtFtd];
  out[kZtHlo] = Z[kZtFlo];
  out[kZtFtd] = Z[kZtHtd];
  out[kZtFlo] = Z[kZtHlo];
  return out;
}

/// Front/hind pair exchange without the spatial mirror. The hip offsets drop
/// out of the dynamics in the infinite-inertia mode, so there this maps
/// solutions to solutions while keeping the travel direction; it exchanges
/// gathered and extended bounding.
inline VecZ leg_exchange(const VecZ& Z) {
  VecZ out = Z;
  out[kZalphaF0] = Z[kZalphaH0];
  out[kZalphaH0] = Z[kZalphaF0];
  out[kZalphadotF0] = Z[kZalphadotH0];
  out[kZalphadotH0] = Z[kZalphadotF0];
  out[kZtHtd] = Z[kZtFtd];
  out[kZtHlo] = Z[kZtFlo];
  out[kZtFtd] = Z[kZtHtd];
  out[kZtFlo] = Z[kZtHlo];
  return out;
}

/// Comparison of a quadrupedal solution against the collapsed model with both
/// hips at the center of mass, which realizes the bipedal model with the
/// front pair acting as the left leg and the hind pair as the right leg.
struct BipedReport {
  double max_body_deviation = 0.0;  // x, y and their rates over one stride
  double max_leg_deviation = 0.0;   // pair angles and their rates
  double biped_residual_norm = 0.0; // shooting residual of the collapsed model
  double max_deviation() const { return std::max(max_body_deviation, max_leg_deviation); }
  bool within(double tol) const { return max_deviation() < tol; }
};

inline BipedReport biped_correspondence_check(const VecZ& Z, const ModelParams& p,
                                              const IntegratorOptions& opts = {}) {
  if (!p.body_inertia.is_infinite())
    throw ConfigError("biped correspondence is defined at infinite body inertia only");
  ModelParams biped = p;
  biped.hip_offset_front = 0.0;
  biped.hip_offset_hind = 0.0;

  const EventSchedule sched = schedule_of(Z);
  const Trajectory quad = integrate_timed(initial_state_of(Z, p), sched, p, opts);
  const Trajectory bi = integrate_timed(initial_state_of(Z, biped), sched, biped, opts);

  BipedReport rep;
  const int n = 256;
  for (int i = 0; i <= n; ++i) {
    const double t = sched.t_stride * static_cast<double>(i) / n;
    const Vec10 a = quad.body_at(t);
    const Vec10 b = bi.body_at(t);
    const Vec10 d = (a - b).cwiseAbs();
    rep.max_body_deviation = std::max({rep.max_body_deviation, d[kQX], d[kQY],
                                       d[5 + kQX], d[5 + kQY]});
    rep.max_leg_deviation = std::max({rep.max_leg_deviation, d[kQAlphaF], d[kQAlphaH],
                                      d[5 + kQAlphaF], d[5 + kQAlphaH]});
  }
  rep.biped_residual_norm = residual(Z, biped, opts).cwiseAbs().maxCoeff();
  return rep;
}

/// Swing symmetry between the two in-place pronking variants at equal apex:
/// the hind legs of the extended gait retrace the front legs of the gathered
/// one. Sampled over the common stride.
inline bool pe_pg_symmetry_check(const VecZ& extended, const VecZ& gathered,
                                 const ModelParams& p, const IntegratorOptions& opts = {},
                                 double* max_mismatch = nullptr) {
  if (std::abs(extended[kZy0] - gathered[kZy0]) > 1e-8)
    throw ConfigError("swing symmetry check requires equal apex heights");
  const Trajectory te = integrate_timed(initial_state_of(extended, p), schedule_of(extended), p, opts);
  const Trajectory tg = integrate_timed(initial_state_of(gathered, p), schedule_of(gathered), p, opts);
  const double T = std::min(extended[kZtStride], gathered[kZtStride]);
  double worst = 0.0;
  const int n = 256;
  for (int i = 0; i <= n; ++i) {
    const double t = T * static_cast<double>(i) / n;
    const Vec10 a = te.body_at(t);
    const Vec10 b = tg.body_at(t);
    worst = std::max({worst, std::abs(a[kQAlphaH] - b[kQAlphaF]),
                      std::abs(a[5 + kQAlphaH] - b[5 + kQAlphaF])});
  }
  if (max_mismatch) *max_mismatch = worst;
  return worst < 1e-6;
}

/// Sampled states at the apex, every contact event, and the stride end, in
/// time order, for external rendering.
struct Keyframe {
  double t;
  HybridState state;
};

inline std::vector<Keyframe> keyframes(const VecZ& Z, const ModelParams& p,
                                       const IntegratorOptions& opts = {}) {
  const EventSchedule sched = schedule_of(Z);
  const Trajectory traj = integrate_timed(initial_state_of(Z, p), sched, p, opts);
  const double T = sched.t_stride;
  std::vector<double> times{0.0};
  for (double e : {sched.t_Htd, sched.t_Hlo, sched.t_Ftd, sched.t_Flo})
    times.push_back(detail::wrap_time(e, T));
  times.push_back(T);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end(),
                          [T](double a, double b) { return std::abs(a - b) <= 1e-12 * T; }),
              times.end());
  std::vector<Keyframe> frames;
  frames.reserve(times.size());
  for (double t : times) frames.push_back({t, traj.state_at(t)});
  return frames;
}

}  // namespace quadgait
