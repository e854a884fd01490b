#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "quadgait/dynamics.hpp"
#include "quadgait/errors.hpp"
#include "quadgait/model.hpp"

namespace quadgait {

using Vec10 = Eigen::Matrix<double, 10, 1>;

struct IntegratorOptions {
  double rtol = 1e-10;
  double atol = 1e-12;
  double max_step = std::numeric_limits<double>::infinity();
  long max_steps = 200000;  // per smooth interval
};

/// Prescribed event times of one stride. Times live in [0, t_stride); a leg
/// whose touch-down time exceeds its lift-off time is in stance across the
/// stride boundary.
struct EventSchedule {
  double t_Htd = 0.0;
  double t_Hlo = 0.0;
  double t_Ftd = 0.0;
  double t_Flo = 0.0;
  double t_stride = 0.0;

  double touchdown(Leg leg) const { return leg == Leg::Front ? t_Ftd : t_Htd; }
  double liftoff(Leg leg) const { return leg == Leg::Front ? t_Flo : t_Hlo; }
  bool wraps(Leg leg) const { return touchdown(leg) > liftoff(leg); }

  bool contact_at_start(Leg leg) const {
    return wraps(leg) || touchdown(leg) == 0.0;
  }

  void validate() const {
    if (!(t_stride > 0.0)) throw EventError("t_stride must be positive");
    for (double t : {t_Htd, t_Hlo, t_Ftd, t_Flo})
      if (!(t >= 0.0) || !(t < t_stride))
        throw EventError("event time outside [0, t_stride)");
    if (t_Htd == t_Hlo || t_Ftd == t_Flo)
      throw EventError("zero-length stance in schedule");
  }
};

/// Piecewise-smooth solution record. Dense evaluation is cubic Hermite on
/// stored step endpoints and derivatives; each phase interval carries its
/// contact configuration.
struct Trajectory {
  struct Step {
    double t0, h;
    Vec10 y0, y1, f0, f1;
    Vec10 dense;  // quartic term of the continuous extension
  };
  struct Interval {
    double t0, t1;
    PhaseConfig phase;
  };
  struct Event {
    double t;
    Leg leg;
    bool touchdown;
  };

  std::vector<Step> steps;
  std::vector<Interval> intervals;
  std::vector<Event> events;
  bool hint_respected = true;

  double t_begin() const { return intervals.empty() ? 0.0 : intervals.front().t0; }
  double t_end() const { return intervals.empty() ? 0.0 : intervals.back().t1; }

  /// Body coordinates (q, qdot) at time t; at event instants this is the
  /// limit from below (pre-reset values; positions are continuous anyway).
  /// Evaluation is the integrator's own fourth-order continuous extension,
  /// so interpolated points carry the same accuracy as step endpoints.
  Vec10 body_at(double t) const {
    if (steps.empty()) throw IntegrationError("empty trajectory");
    auto it = std::upper_bound(steps.begin(), steps.end(), t,
                               [](double tt, const Step& s) { return tt < s.t0; });
    const Step& s = (it == steps.begin()) ? *it : *(it - 1);
    const double th = std::clamp((t - s.t0) / s.h, 0.0, 1.0);
    const double th1 = 1.0 - th;
    const Vec10 ydiff = s.y1 - s.y0;
    const Vec10 bspl = s.h * s.f0 - ydiff;
    const Vec10 cspl = ydiff - s.h * s.f1 - bspl;
    return s.y0 + th * (ydiff + th1 * (bspl + th * (cspl + th1 * s.dense)));
  }

  const Interval& interval_at(double t) const {
    if (intervals.empty()) throw IntegrationError("empty trajectory");
    for (const auto& iv : intervals)
      if (t < iv.t1) return iv;
    return intervals.back();
  }

  HybridState state_at(double t) const {
    const Vec10 y = body_at(t);
    const Interval& iv = interval_at(t);
    HybridState s;
    s.q = y.head<5>();
    s.qdot = y.tail<5>();
    for (Leg leg : kLegs) {
      if (iv.phase.contact(leg)) {
        s.phase[leg_index(leg)] = LegPhase::Stance;
        s.foothold[leg_index(leg)] = iv.phase.foothold(leg);
      }
    }
    return s;
  }

  HybridState final_state() const { return state_at(t_end()); }

  double energy_at(double t, const ModelParams& p) const {
    return total_energy(state_at(t), p);
  }
};

namespace detail {

/// Dormand-Prince 5(4) tableau; the 5th-order weights are row a[6] (FSAL)
/// and e holds b5 - b4 for the embedded error estimate.
struct Dopri5Tableau {
  static constexpr int stages = 7;
  static constexpr std::array<std::array<double, 6>, 7> a{{
      {},
      {1.0 / 5},
      {3.0 / 40, 9.0 / 40},
      {44.0 / 45, -56.0 / 15, 32.0 / 9},
      {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
      {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
      {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
  }};
  static constexpr std::array<double, 7> e{71.0 / 57600,       0.0,
                                           -71.0 / 16695,      71.0 / 1920,
                                           -17253.0 / 339200,  22.0 / 525,
                                           -1.0 / 40};
  // Weights of the quartic term in the continuous extension.
  static constexpr std::array<double, 7> d{
      -12715105075.0 / 11282082432.0, 0.0,
      87487479700.0 / 32700410799.0,  -10690763975.0 / 1880347072.0,
      701980252875.0 / 199316789632.0, -1453857185.0 / 822651844.0,
      69997945.0 / 29380423.0};
};

inline Vec10 hybrid_rhs(const Vec10& y, const PhaseConfig& phase,
                        const ModelParams& p) {
  Vec10 dy;
  dy.head<5>() = y.tail<5>();
  dy.tail<5>() = eval_dynamics(y.head<5>(), y.tail<5>(), phase, p);
  return dy;
}

/// Adaptive stepper over one smooth phase, either time direction.
class PhaseStepper {
public:
  PhaseStepper(const Vec10& y, double t, const PhaseConfig& phase,
               const ModelParams& params, const IntegratorOptions& opts)
      : y_(y), t_(t), phase_(phase), p_(params), o_(opts) {
    f_ = hybrid_rhs(y_, phase_, p_);
  }

  double t() const { return t_; }
  const Vec10& y() const { return y_; }
  const Vec10& f() const { return f_; }

  /// Takes exactly one accepted step, clipped so it never passes t_limit.
  Trajectory::Step step_once(double t_limit) {
    const double dir = (t_limit >= t_) ? 1.0 : -1.0;
    if (dir * (t_limit - t_) <= 0.0)
      throw IntegrationError("step requested past the time limit");
    if (h_next_ == 0.0) h_next_ = initial_step(t_limit, dir);
    double h = dir * std::min({std::abs(h_next_), o_.max_step, std::abs(t_limit - t_)});
    for (long attempt = 0;; ++attempt) {
      if (attempt > 200 ||
          std::abs(h) < 4.0 * std::numeric_limits<double>::epsilon() *
                            std::max(1.0, std::abs(t_)))
        throw IntegrationError("step size underflow");
      Vec10 y1, f1, dense;
      const double err = attempt_step(h, y1, f1, dense);
      const double fac =
          std::clamp(0.9 * std::pow(std::max(err, 1e-16), -0.2), 0.1, 5.0);
      if (err <= 1.0) {
        Trajectory::Step step{t_, h, y_, y1, f_, f1, dense};
        const bool hit_limit = (std::abs(h) >= std::abs(t_limit - t_) * (1.0 - 1e-12));
        t_ = hit_limit ? t_limit : t_ + h;
        y_ = y1;
        f_ = f1;  // FSAL
        h_next_ = h * fac;
        return step;
      }
      h *= std::min(fac, 0.5);
    }
  }

  /// Advances to exactly t_end, appending accepted steps to out (if given).
  void run_to(double t_end, Trajectory* out, long* budget = nullptr) {
    const double dir = (t_end >= t_) ? 1.0 : -1.0;
    long local = 0;
    long& n = budget ? *budget : local;
    while (dir * (t_end - t_) > 0.0) {
      if (++n > o_.max_steps)
        throw IntegrationError("step budget exhausted in smooth interval");
      const Trajectory::Step s = step_once(t_end);
      if (out != nullptr) out->steps.push_back(s);
    }
  }

private:
  double attempt_step(double h, Vec10& y1, Vec10& f1, Vec10& dense) {
    using T = Dopri5Tableau;
    std::array<Vec10, 7> k;
    k[0] = f_;
    for (int i = 1; i < T::stages; ++i) {
      Vec10 yi = y_;
      for (int j = 0; j < i; ++j)
        if (T::a[i][j] != 0.0) yi += (h * T::a[i][j]) * k[j];
      k[i] = hybrid_rhs(yi, phase_, p_);
    }
    y1 = y_;
    for (int j = 0; j < 6; ++j)
      if (T::a[6][j] != 0.0) y1 += (h * T::a[6][j]) * k[j];
    f1 = k[6];
    dense.setZero();
    for (int j = 0; j < 7; ++j)
      if (T::d[j] != 0.0) dense += (h * T::d[j]) * k[j];
    double err2 = 0.0;
    for (int i = 0; i < 10; ++i) {
      double e = 0.0;
      for (int j = 0; j < 7; ++j) e += T::e[j] * k[j][i];
      e *= h;
      const double sc = o_.atol + o_.rtol * std::max(std::abs(y_[i]), std::abs(y1[i]));
      err2 += (e / sc) * (e / sc);
    }
    return std::sqrt(err2 / 10.0);
  }

  double initial_step(double t_end, double dir) const {
    double d0 = 0.0, d1 = 0.0;
    for (int i = 0; i < 10; ++i) {
      const double sc = o_.atol + o_.rtol * std::abs(y_[i]);
      d0 += (y_[i] / sc) * (y_[i] / sc);
      d1 += (f_[i] / sc) * (f_[i] / sc);
    }
    double h = (d1 > 0.0) ? 0.01 * std::sqrt(d0 / d1) : 1e-6;
    h = std::min({h, std::abs(t_end - t_), o_.max_step});
    return dir * std::max(h, 1e-12);
  }

  Vec10 y_;
  double t_;
  Vec10 f_;
  PhaseConfig phase_;
  const ModelParams& p_;
  const IntegratorOptions& o_;
  double h_next_ = 0.0;
};

inline Vec10 pack_state(const HybridState& s) {
  Vec10 y;
  y.head<5>() = s.q;
  y.tail<5>() = s.qdot;
  return y;
}

inline HybridState unpack_state(const Vec10& y, const PhaseConfig& phase) {
  HybridState s;
  s.q = y.head<5>();
  s.qdot = y.tail<5>();
  for (Leg leg : kLegs)
    if (phase.contact(leg)) {
      s.phase[leg_index(leg)] = LegPhase::Stance;
      s.foothold[leg_index(leg)] = phase.foothold(leg);
    }
  return s;
}

}  // namespace detail

/// Integrates one smooth interval with a fixed contact configuration taken
/// from the state, either time direction. Exposed for order and reversal
/// checks; the hybrid drivers are built on the same stepper.
inline HybridState integrate_interval(const HybridState& initial, double t0, double t1,
                                      const ModelParams& params,
                                      const IntegratorOptions& opts = {},
                                      Trajectory* out = nullptr) {
  const PhaseConfig phase = PhaseConfig::from_state(initial);
  detail::PhaseStepper stepper(detail::pack_state(initial), t0, phase, params, opts);
  if (out != nullptr) out->intervals.push_back({t0, t1, phase});
  stepper.run_to(t1, out);
  return detail::unpack_state(stepper.y(), phase);
}

/// Marks the legs that the schedule has in stance at stride start, with
/// footholds reconstructed from the constraint through the encoded leg
/// angle. Legs not in contact are reset to swing.
inline HybridState attach_scheduled_contacts(HybridState state,
                                             const EventSchedule& schedule,
                                             const ModelParams& params) {
  state.phase = {LegPhase::Swing, LegPhase::Swing};
  for (Leg leg : kLegs) {
    if (schedule.contact_at_start(leg)) {
      const double lb = params.hip_offset_abs(leg);
      const double phi = state.pitch();
      const double theta = state.leg_angle(leg) + phi;
      if (!(std::cos(theta) > 0.0))
        throw GeometryError("wrapped stance leg horizontal at stride start");
      const double v = state.y() + lb * std::sin(phi);
      state.phase[leg_index(leg)] = LegPhase::Stance;
      state.foothold[leg_index(leg)] =
          state.x() + lb * std::cos(phi) + v * std::tan(theta);
    }
  }
  return state;
}

/// Timed (BVP) mode: contact changes happen exactly at the scheduled times;
/// touch-downs apply the velocity reset, lift-offs release the leg with
/// continuous rates. Event conditions are not checked here — enforcing them
/// is the boundary residual's job.
inline Trajectory integrate_timed(const HybridState& initial,
                                  const EventSchedule& schedule,
                                  const ModelParams& params,
                                  const IntegratorOptions& opts = {}) {
  schedule.validate();
  const double T = schedule.t_stride;

  std::vector<Trajectory::Event> evs;
  for (Leg leg : {Leg::Hind, Leg::Front}) {
    if (schedule.touchdown(leg) > 0.0)
      evs.push_back({schedule.touchdown(leg), leg, true});
    evs.push_back({schedule.liftoff(leg), leg, false});
  }
  std::stable_sort(evs.begin(), evs.end(),
                   [](const Trajectory::Event& a, const Trajectory::Event& b) {
                     return a.t < b.t;
                   });

  HybridState state = attach_scheduled_contacts(initial, schedule, params);

  Trajectory traj;
  double t_cur = 0.0;
  std::size_t next = 0;
  const double width_floor = 1e-14 * std::max(1.0, T);
  while (true) {
    const double t_next = (next < evs.size()) ? evs[next].t : T;
    const PhaseConfig phase = PhaseConfig::from_state(state);
    if (t_next - t_cur > width_floor) {
      detail::PhaseStepper stepper(detail::pack_state(state), t_cur, phase, params,
                                   opts);
      try {
        stepper.run_to(t_next, &traj);
      } catch (NumericalError& e) {
        throw IntegrationError(std::string(e.what()) + " (t near " +
                               std::to_string(stepper.t()) + ")");
      }
      state = detail::unpack_state(stepper.y(), phase);
    }
    traj.intervals.push_back({t_cur, t_next, phase});
    t_cur = t_next;
    if (next >= evs.size()) break;
    const Trajectory::Event& ev = evs[next];
    state = ev.touchdown ? touchdown_reset(state, ev.leg, params)
                         : liftoff(state, ev.leg);
    traj.events.push_back(ev);
    ++next;
  }
  return traj;
}

/// Cyclic footfall expectation for free simulation. Gaits in this model
/// legitimately sweep swing feet through ground level (scuffing carries no
/// physics), so an uninformed first-crossing rule can fire spurious
/// touch-downs; the hint pins which touch-down comes next. Lift-offs are
/// never gated — a stance spring reaching rest length must release.
struct FootfallHint {
  struct Entry {
    Leg leg;
    bool touchdown;
  };
  std::vector<Entry> sequence;  // cyclic, in stride order
  std::size_t start = 0;
};

/// Free (event-driven) mode. Touch-down fires when a swing leg's extension
/// residual crosses zero from above with the foot descending; lift-off when
/// a stance leg returns to rest length. Events are located by safeguarded
/// secant on exact re-integration (no interpolation error), then the flow
/// restarts at the event time.
inline Trajectory simulate_free(const HybridState& initial, double duration,
                                const ModelParams& params,
                                const IntegratorOptions& opts = {},
                                const std::optional<FootfallHint>& hint = std::nullopt) {
  if (!(duration > 0.0)) throw EventError("duration must be positive");
  HybridState state = initial;
  Trajectory traj;
  double t_cur = 0.0;
  std::size_t hint_pos = hint ? hint->start : 0;

  auto hint_allows_touchdown = [&](Leg leg) {
    if (!hint || hint->sequence.empty()) return true;
    const auto& e = hint->sequence[hint_pos % hint->sequence.size()];
    return e.touchdown && e.leg == leg;
  };
  auto hint_advance = [&](Leg leg, bool touchdown) {
    if (!hint || hint->sequence.empty()) return;
    const auto& e = hint->sequence[hint_pos % hint->sequence.size()];
    if (e.leg == leg && e.touchdown == touchdown)
      ++hint_pos;
    else
      traj.hint_respected = false;
  };
  auto check_ground = [&](const Vec10& y, double t) {
    for (Leg leg : kLegs)
      if (hip_height(y.head<5>(), leg, params) < 1e-3 * params.leg_rest_length)
        throw GeometryError("body ground strike at t near " + std::to_string(t));
  };

  check_ground(detail::pack_state(state), 0.0);

  const double tail_floor = 1e-13 * std::max(1.0, duration);
  while (duration - t_cur > tail_floor) {
    // Simultaneous and boundary events: a leg sitting on its event surface
    // with strongly transversal motion fires before any integration (paired
    // touch-downs in pronking land in the same instant, paired lift-offs
    // release in the same instant).
    for (int guard = 0; guard < 8; ++guard) {
      bool fired = false;
      for (Leg leg : kLegs) {
        const double g = extension_residual(state.q, leg, params);
        if (std::abs(g) > 1e-11) continue;
        const double phi = state.pitch();
        const double gdot =
            state.qdot[kQY] +
            params.hip_offset_abs(leg) * std::cos(phi) * state.qdot[kQPhi] +
            params.leg_rest_length * std::sin(state.leg_angle(leg) + phi) *
                (state.leg_rate(leg) + state.qdot[kQPhi]);
        if (state.in_stance(leg)) {
          if (gdot < 1e-6) continue;
          state = liftoff(state, leg);
          traj.events.push_back({t_cur, leg, false});
          hint_advance(leg, false);
          fired = true;
        } else {
          if (gdot > -1e-6 || !hint_allows_touchdown(leg)) continue;
          state = touchdown_reset(state, leg, params);
          traj.events.push_back({t_cur, leg, true});
          hint_advance(leg, true);
          fired = true;
        }
      }
      if (!fired) break;
    }

    const PhaseConfig phase = PhaseConfig::from_state(state);
    const double interval_start = t_cur;
    detail::PhaseStepper stepper(detail::pack_state(state), t_cur, phase, params, opts);

    bool event_applied = false;
    long budget = 0;
    while (!event_applied && stepper.t() < duration) {
      if (++budget > opts.max_steps)
        throw IntegrationError("step budget exhausted in free simulation");
      const Trajectory::Step step = stepper.step_once(duration);

      // Earliest qualifying event inside this step, if any.
      double best_t = std::numeric_limits<double>::infinity();
      Leg best_leg = Leg::Front;
      bool best_td = false;
      for (Leg leg : kLegs) {
        const bool stance = phase.contact(leg);
        const double g0 = extension_residual(step.y0.head<5>(), leg, params);
        const double g1 = extension_residual(step.y1.head<5>(), leg, params);
        const bool crossing = stance ? (g0 < 0.0 && g1 >= 0.0)
                                     : (g0 > 0.0 && g1 <= 0.0);
        if (!crossing) continue;
        if (!stance && !hint_allows_touchdown(leg)) continue;  // scuff through

        // Safeguarded secant (Illinois) on exact re-integration from step.t0.
        const double t_floor =
            step.t0 + 32.0 * std::numeric_limits<double>::epsilon() *
                          std::max(1.0, std::abs(step.t0));
        auto g_of = [&](double t) {
          if (t <= t_floor) return g0;
          detail::PhaseStepper scratch(step.y0, step.t0, phase, params, opts);
          scratch.run_to(t, nullptr);
          return extension_residual(scratch.y().head<5>(), leg, params);
        };
        double ta = step.t0, tb = step.t0 + step.h, ga = g0, gb = g1;
        const double ttol = 1e-13 * std::max(1.0, std::abs(tb));
        for (int it = 0; it < 80 && (tb - ta) > ttol; ++it) {
          double tm = tb - gb * (tb - ta) / (gb - ga);
          if (!(tm > ta && tm < tb)) tm = 0.5 * (ta + tb);
          const double gm = g_of(tm);
          if ((gm < 0.0) == (ga < 0.0)) {
            ta = tm;
            ga = gm;
            gb *= 0.5;  // Illinois trick against endpoint stagnation
          } else {
            tb = tm;
            gb = gm;
            ga *= 0.5;
          }
        }
        const double t_star = 0.5 * (ta + tb);

        if (!stance) {
          // Transversality: require the foot to be genuinely descending.
          detail::PhaseStepper scratch(step.y0, step.t0, phase, params, opts);
          if (t_star > t_floor) scratch.run_to(t_star, nullptr);
          const Vec5 q = scratch.y().head<5>();
          const Vec5 qd = scratch.y().tail<5>();
          const double phi = q[kQPhi];
          const double lb = params.hip_offset_abs(leg);
          const double foot_ydot =
              qd[kQY] + lb * std::cos(phi) * qd[kQPhi] +
              params.leg_rest_length * std::sin(q[leg_q_index(leg)] + phi) *
                  (qd[leg_q_index(leg)] + qd[kQPhi]);
          if (foot_ydot > -1e-12) continue;  // grazing contact, pass through
        }
        if (t_star < best_t) {
          best_t = t_star;
          best_leg = leg;
          best_td = !stance;
        }
      }

      if (!std::isfinite(best_t)) {
        // No event here: the step stands, so its endpoint must be a valid
        // body configuration. An endpoint past an event is never checked —
        // the post-event flow is what has to stay off the ground.
        check_ground(step.y1, stepper.t());
        traj.steps.push_back(step);
        continue;
      }

      // Re-integrate the truncated step so the stored trajectory ends
      // exactly at the event, then apply it.
      const double t_floor =
          step.t0 + 32.0 * std::numeric_limits<double>::epsilon() *
                        std::max(1.0, std::abs(step.t0));
      detail::PhaseStepper scratch(step.y0, step.t0, phase, params, opts);
      if (best_t > t_floor) scratch.run_to(best_t, &traj);
      state = detail::unpack_state(scratch.y(), phase);
      state = best_td ? touchdown_reset(state, best_leg, params)
                      : liftoff(state, best_leg);
      traj.events.push_back({best_t, best_leg, best_td});
      hint_advance(best_leg, best_td);
      traj.intervals.push_back({interval_start, best_t, phase});
      t_cur = best_t;
      event_applied = true;
    }

    if (!event_applied) {
      // Ran out the clock in this phase.
      traj.intervals.push_back({interval_start, duration, phase});
      state = detail::unpack_state(stepper.y(), phase);
      t_cur = duration;
    }
  }
  return traj;
}

}  // namespace quadgait
