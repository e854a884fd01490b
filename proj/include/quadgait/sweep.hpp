#pragma once

// Gait families across body inertia: a homotopy that carries a converged
// solution between inertia values, a structural probe of how the two-flight
// bounding family attaches to the single-flight families, and a bisection
// locating the inertia values where that attachment changes.

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "quadgait/continuation.hpp"

namespace quadgait {

inline ModelParams with_inertia(ModelParams p, const Inertia& J) {
  p.body_inertia = J;
  p.validate();
  return p;
}

namespace detail {

/// Half-stride stagger defect. The in-place bound's front stance mirrors
/// its hind stance half a stride later, so t_Ftd - t_Htd = T/2 identically
/// along that family at every inertia. Traveling bounding families carry
/// the same half-stride timing, but they sit at different energies; what
/// this anchor excludes is the pronk, which collapses the stagger to zero
/// at the same energy and otherwise captures long Newton hops wholesale.
inline double stagger_defect(const VecZ& z) {
  return z[kZtFtd] - z[kZtHtd] - 0.5 * z[kZtStride];
}

/// One point on the finite-inertia in-place bounding family, reached from
/// the closed-form infinite-inertia stride by an inertia ladder anchored at
/// the stride energy and the half-stride stagger. A frozen-pitch seed
/// cannot even be integrated at small J (stance forces are gravity-scale at
/// any apex, and one stance is long enough to pitch a leg past horizontal),
/// so there is no cold start at the target inertia; the ladder is the only
/// way in. The energy anchor alone is not enough: the pronk lives at the
/// same energy with zero stagger and captures long Newton hops wholesale,
/// which the stagger anchor excludes. A failed stage is split at its
/// geometric midpoint until it fits; a jam at the refinement floor becomes
/// a ConvergenceError naming the interval. The returned member sits at the
/// anchored energy, not at the infinite-limit apex: finite inertia spends
/// part of the energy budget on pitch motion, which lowers the apex, and
/// the caller traces the family from wherever the ladder lands. The anchor
/// energy matters: paths pinned at higher energies (apex beyond roughly
/// 1.1) run into isolated inertias where the pinned member loses regularity
/// and no step size gets past, while the default anchor descends cleanly.
inline VecZ in_place_bound_at(double apex_at_infinity, const ModelParams& p,
                              const SolveOptions& sopt) {
  const ModelParams p_inf = with_inertia(p, Inertia::infinite());
  VecZ cur = seed_vertical_gait(GaitKind::BP, apex_at_infinity, p_inf);
  const double E0 = solution_energy(cur, p_inf);
  auto anchored = [&E0, &sopt](const VecZ& g, const ModelParams& pk) {
    return solve(g, pk,
                 {[E0, pk](const VecZ& z) { return solution_energy(z, pk) - E0; },
                  stagger_defect},
                 {}, sopt);
  };
  cur = anchored(cur, p_inf);
  if (p.body_inertia.is_infinite()) return cur;
  double J_from = 1e3;
  cur = anchored(cur, with_inertia(p, Inertia::finite(J_from)));
  std::vector<double> pending{p.body_inertia.value()};
  while (!pending.empty()) {
    const double J_next = pending.back();
    try {
      cur = anchored(cur, with_inertia(p, Inertia::finite(J_next)));
      J_from = J_next;
      pending.pop_back();
    } catch (const NumericalError& e) {
      if (std::log(J_from / J_next) < 1e-3) {
        std::ostringstream msg;
        msg << "in-place bounding seed jammed between J = " << J_from << " and "
            << J_next << ": " << e.what();
        throw ConvergenceError(msg.str());
      }
      pending.push_back(std::sqrt(J_from * J_next));
    }
  }
  return cur;
}

}  // namespace detail

struct HomotopyOptions {
  int steps = 12;             // log-spaced stages toward the target inertia
  double first_finite = 1e3;  // entry stage when leaving the infinite-J limit
  SolveOptions solver;
};

/// Carries a converged stride solution from the inertia of `p` to `J_target`
/// by re-solving at a ladder of intermediate inertias. The solution is
/// anchored to its apex energy at every stage while the extra pitch
/// coordinates (inactive in the infinite-J limit) come alive. Energy fixes
/// the point within its one-parameter family only up to the finitely many
/// same-energy members: near a branch point, where several lie close, the
/// carried solution can slide along the family or land on a neighboring
/// pitch-synchronized sheet, so callers that need a specific point re-pin it
/// afterwards. Throws ConvergenceError naming the last good inertia when the
/// solution ceases to exist along the ladder.
inline VecZ continue_in_inertia(const VecZ& Z, const ModelParams& p, const Inertia& J_target,
                                const HomotopyOptions& opt = {}) {
  if (opt.steps < 1) throw ConfigError("inertia homotopy needs at least one stage");
  const double E0 = solution_energy(Z, p);

  std::vector<Inertia> ladder;
  auto log_stages = [&ladder, &opt](double from, double to) {
    if (std::abs(std::log(to / from)) < 1e-12) return;
    for (int k = 1; k <= opt.steps; ++k)
      ladder.push_back(Inertia::finite(
          std::exp(std::log(from) + (std::log(to) - std::log(from)) * k / opt.steps)));
  };
  if (J_target.is_infinite()) {
    if (p.body_inertia.is_infinite()) return Z;
    const double J0 = p.body_inertia.value();
    log_stages(J0, std::max(J0, opt.first_finite));
    ladder.push_back(Inertia::infinite());
  } else if (p.body_inertia.is_infinite()) {
    // Enter the finite regime no lower than the target; the frozen-pitch
    // solution is a good guess anywhere the pitch response is still small.
    const double entry = std::max(opt.first_finite, J_target.value());
    ladder.push_back(Inertia::finite(entry));
    log_stages(entry, J_target.value());
  } else {
    log_stages(p.body_inertia.value(), J_target.value());
  }

  VecZ cur = Z;
  Inertia last_good = p.body_inertia;
  for (const Inertia& J : ladder) {
    const ModelParams pk = with_inertia(p, J);
    if (J.is_infinite()) {
      // The infinite-J layout freezes the pitch coordinates at zero.
      cur[kZphi0] = 0.0;
      cur[kZphidot0] = 0.0;
    }
    try {
      cur = solve(cur, pk,
                  {[E0, pk](const VecZ& z) { return solution_energy(z, pk) - E0; }}, {},
                  opt.solver);
    } catch (const NumericalError& e) {
      std::ostringstream msg;
      msg << "inertia homotopy lost the solution at J = "
          << (J.is_infinite() ? std::string("inf") : std::to_string(J.value()))
          << " (last good J = "
          << (last_good.is_infinite() ? std::string("inf") : std::to_string(last_good.value()))
          << "): " << e.what();
      throw ConvergenceError(msg.str());
    }
    last_good = J;
  }
  return cur;
}

struct ProbeOptions {
  // Infinite-limit apex whose stride energy anchors the seed. At small
  // inertia the pitch share of the energy puts the landing apex below the
  // pivot, so the in-place branch is traced both ways from the landing.
  double seed_apex = 1.08;
  double pivot_apex = 1.0212;  // expected apex of the two-flight pivot
  double pivot_window = 0.05;  // pivot accepted within this apex distance
  double apex_ceiling = 1.35;  // upward trace of the in-place branch stops here
  double speed_cut = 6.0;      // child trace ends beyond this forward speed
  double vertical_step = 0.02;
  double child_step = 0.05;
  int max_child_points = 500;
  SolveOptions solver;
};

/// Census of the two-flight family at one inertia: the in-place bounding
/// branch is traced through its two-flight pivot, the two-flight child is
/// followed away from the pivot until it either reaches the speed cut or
/// runs out, and the attachment structure is read off the child's labels and
/// fold points.
struct InertiaCensus {
  double pivot_apex = 0.0;  // located pivot apex height
  Branch vertical;          // in-place bounding segment through the pivot
  Branch child;             // two-flight family away from the pivot
  // Gathered / extended single-flight labels appear on the child: the
  // two-flight family continues seamlessly onto single-flight bounding.
  bool joins_single_flight = false;
  // An energy fold below the speed cut: the connection passes through a
  // turning-point pair rather than running monotonically.
  bool connecting_fold = false;
};

inline InertiaCensus census_two_flight_family(const ModelParams& p, const ProbeOptions& popt = {}) {
  InertiaCensus out;

  // Seeds on the in-place bounding branch: one member ladder-carried from
  // the closed-form infinite-J stride, a second re-anchored next to it at a
  // slightly lower energy. At finite inertia the pair lands wherever the
  // pitch share of the energy budget puts it, above or below the pivot, so
  // the branch is traced downward first and upward when the pivot is not in
  // the downward segment.
  const VecZ a = detail::in_place_bound_at(popt.seed_apex, p, popt.solver);
  const double Eb = solution_energy(a, p) - 0.01;
  const VecZ b = solve(
      a, p,
      {[Eb, &p](const VecZ& z) { return solution_energy(z, p) - Eb; },
       detail::stagger_defect},
      {}, popt.solver);

  TraceOptions vt;
  vt.step = popt.vertical_step;
  vt.solver = popt.solver;
  DetectOptions dopt;
  dopt.solver = popt.solver;
  SpecialPoint pivot;
  bool have_pivot = false;
  auto pivot_in = [&](Branch& br) {
    detect_bifurcations(br, p, dopt);
    for (const auto& sp : br.specials) {
      if (sp.kind != SpecialKind::Pitchfork) continue;
      const double dist = std::abs(sp.Z[kZy0] - popt.pivot_apex);
      if (dist < popt.pivot_window &&
          (!have_pivot || dist < std::abs(pivot.Z[kZy0] - popt.pivot_apex))) {
        pivot = sp;
        have_pivot = true;
      }
    }
  };

  StopRules down_rules;
  down_rules.max_points = 600;
  down_rules.until = [](const BranchPoint& q) { return q.Z[kZy0] < 1.004; };
  out.vertical = trace(a, b, p, vt, down_rules);
  pivot_in(out.vertical);
  if (!have_pivot) {
    StopRules up_rules;
    up_rules.max_points = 600;
    const double ceiling = popt.apex_ceiling;
    up_rules.until = [ceiling](const BranchPoint& q) { return q.Z[kZy0] > ceiling; };
    Branch up = trace(b, a, p, vt, up_rules);
    pivot_in(up);
    if (have_pivot) out.vertical = std::move(up);
  }
  if (!have_pivot) throw ConvergenceError("no two-flight pivot on the in-place bounding branch");
  out.pivot_apex = pivot.Z[kZy0];

  SwitchOptions sopt;
  sopt.solver = popt.solver;
  const double cut = popt.speed_cut;
  auto child_on_side = [&](int side) {
    auto [s1, s2] = switch_branch(out.vertical, pivot, p, side, sopt);
    TraceOptions ct;
    ct.step = popt.child_step;
    ct.solver = popt.solver;
    StopRules crules;
    crules.max_points = popt.max_child_points;
    crules.until = [cut](const BranchPoint& q) { return std::abs(q.Z[kZxdot0]) > cut; };
    return trace(s1, s2, p, ct, crules);
  };
  // At finite inertia the parent family sways, which breaks the mirror
  // equivalence of the pitchfork arms: one arm dives into the grazing limit
  // and ends there. When the first arm dies low and slow, the structure is
  // read off the other arm.
  out.child = child_on_side(+1);
  const BranchPoint& tail = out.child.points.back();
  if (std::abs(tail.Z[kZxdot0]) < cut && tail.Z[kZy0] < 1.01)
    out.child = child_on_side(-1);

  for (const auto& q : out.child.points)
    if (q.label.kind == GaitKind::BG || q.label.kind == GaitKind::BE) {
      out.joins_single_flight = true;
      break;
    }
  for (const auto& sp : out.child.specials)
    if (sp.kind == SpecialKind::Turning && std::abs(sp.Z[kZxdot0]) < cut) {
      out.connecting_fold = true;
      break;
    }
  return out;
}

/// Structural changes located by find_critical_inertia. Each is a predicate
/// over the census that differs on the two sides of the critical inertia.
enum class StructuralEvent {
  TwoFlightJoinsSingleFlight,  // below: one connected branch; above: separate
  ConnectingFoldsVanish,       // below: monotone connection; above: fold pair
};

inline bool structural_predicate(const InertiaCensus& c, StructuralEvent ev) {
  switch (ev) {
    case StructuralEvent::TwoFlightJoinsSingleFlight: return c.joins_single_flight;
    case StructuralEvent::ConnectingFoldsVanish: return c.connecting_fold;
  }
  throw ConfigError("unknown structural event");
}

struct CriticalInertiaResult {
  double J_crit = 0.0;
  std::vector<std::pair<double, bool>> probes;  // (J, predicate) in probe order
};

/// Bisects a bracket on a boolean structural predicate until it is narrower
/// than `tol`, returning the midpoint and the probe history. The bracket
/// must straddle the change.
inline CriticalInertiaResult bisect_structural(const std::function<bool(double)>& predicate,
                                               double low, double high, double tol) {
  if (!(low > 0.0) || !(high > low) || !(tol > 0.0))
    throw ConfigError("invalid bisection bracket");
  CriticalInertiaResult out;
  auto probe = [&](double x) {
    const bool v = predicate(x);
    out.probes.emplace_back(x, v);
    return v;
  };
  const bool low_v = probe(low);
  if (low_v == probe(high))
    throw ConfigError("bracket does not straddle the structural change");
  double lo = low, hi = high;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (probe(mid) == low_v)
      lo = mid;
    else
      hi = mid;
  }
  out.J_crit = 0.5 * (lo + hi);
  return out;
}

/// Locates the inertia at which the branch structure changes, re-probing the
/// two-flight census at every bisection midpoint.
inline CriticalInertiaResult find_critical_inertia(StructuralEvent ev, double J_low,
                                                   double J_high, const ModelParams& base,
                                                   double tol = 5e-3,
                                                   const ProbeOptions& popt = {}) {
  return bisect_structural(
      [&](double J) {
        return structural_predicate(
            census_two_flight_family(with_inertia(base, Inertia::finite(J)), popt), ev);
      },
      J_low, J_high, tol);
}

}  // namespace quadgait
