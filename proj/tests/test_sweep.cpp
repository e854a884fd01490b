#include <gtest/gtest.h>

#include <cmath>

#include "quadgait/sweep.hpp"

using namespace quadgait;

namespace {

// A two-flight solution a little off its pivot on the in-place bounding
// branch, shared by the heavier suites below.
struct TwoFlightSeed {
  ModelParams params;       // infinite inertia
  VecZ s1, s2;              // switch products at eps and 2 eps
};

const TwoFlightSeed& two_flight_seed() {
  static const TwoFlightSeed s = [] {
    TwoFlightSeed t;
    const VecZ a = seed_vertical_gait(GaitKind::BP, 1.05, t.params);
    const VecZ b = seed_vertical_gait(GaitKind::BP, 1.045, t.params);
    TraceOptions topt;
    topt.step = 0.02;
    StopRules rules;
    rules.until = [](const BranchPoint& q) { return q.Z[kZy0] < 1.006; };
    Branch br = trace(a, b, t.params, topt, rules);
    detect_bifurcations(br, t.params);
    const SpecialPoint* pivot = nullptr;
    for (const auto& sp : br.specials)
      if (sp.kind == SpecialKind::Pitchfork && std::abs(sp.Z[kZy0] - 1.0212) < 0.02)
        pivot = &sp;
    if (!pivot) throw std::runtime_error("two-flight pivot not found in fixture");
    auto [s1, s2] = switch_branch(br, *pivot, t.params, +1);
    t.s1 = s1;
    t.s2 = s2;
    return t;
  }();
  return s;
}

}  // namespace

TEST(Homotopy, PronkingSolutionsAreInertiaIndependent) {
  // A horizontal body feels no pitch torque when front and hind legs act
  // together, so the pronking families do not depend on the body inertia:
  // carrying a solution to finite inertia must leave it unchanged.
  ModelParams p;
  const VecZ pp = solve(seed_vertical_gait(GaitKind::PP, 1.3, p), p);
  const VecZ pp2 = continue_in_inertia(pp, p, Inertia::finite(2.0));
  EXPECT_LT((pp2 - pp).cwiseAbs().maxCoeff(), 1e-9);

  const VecZ pf = solve(pp, p, {[](const VecZ& z) { return z[kZxdot0] - 1.2; }});
  const VecZ pf2 = continue_in_inertia(pf, p, Inertia::finite(0.9));
  EXPECT_LT((pf2 - pf).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Homotopy, TwoFlightBoundingAcquiresPitchRate) {
  // Bounding loads one leg pair at a time at a hip offset, so a finite-J
  // body must pitch: carried down from the infinite limit, a two-flight
  // solution picks up a nonzero apex pitch rate while staying converged.
  const auto& seed = two_flight_seed();
  const ModelParams pj = with_inertia(seed.params, Inertia::finite(1.047));
  const VecZ zj = continue_in_inertia(seed.s2, seed.params, Inertia::finite(1.047));
  EXPECT_GT(std::abs(zj[kZphidot0]), 1e-3);
  EXPECT_LT(residual(zj, pj).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(classify(zj, pj).kind, GaitKind::B2);
}

TEST(Homotopy, CarryPreservesApexEnergyAndConvergence) {
  // The ladder anchors the apex energy at every stage, so the carried
  // solution reports the seed's energy under the target inertia exactly
  // and satisfies the stride map there.
  const auto& seed = two_flight_seed();
  for (double J : {2.0, 0.8}) {
    const ModelParams pj = with_inertia(seed.params, Inertia::finite(J));
    const VecZ zj = continue_in_inertia(seed.s2, seed.params, Inertia::finite(J));
    EXPECT_NEAR(solution_energy(zj, pj), solution_energy(seed.s2, seed.params), 1e-8);
    EXPECT_LT(residual(zj, pj).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Homotopy, HugeInertiaIsASmallPerturbationOfTheFrozenPitchLimit) {
  // Continuity at the top of the ladder: at four orders of magnitude above
  // the body scale the pitch barely responds, so the carried solution must
  // sit next to its frozen-pitch seed, with a pitch rate that is nonzero
  // but of order 1/J.
  const auto& seed = two_flight_seed();
  const VecZ zj = continue_in_inertia(seed.s2, seed.params, Inertia::finite(1e4));
  EXPECT_LT((zj - seed.s2).cwiseAbs().maxCoeff(), 1e-2);
  EXPECT_GT(std::abs(zj[kZphidot0]), 1e-8);
  EXPECT_LT(std::abs(zj[kZphidot0]), 1e-2);
  const ModelParams pj = with_inertia(seed.params, Inertia::finite(1e4));
  EXPECT_EQ(classify(zj, pj).kind, GaitKind::B2);
}

TEST(Census, SeparateFamiliesAtInfiniteInertia) {
  // In the infinite-inertia limit the two-flight family runs to high speed
  // on its own: no single-flight labels, no connecting fold below the cut.
  ModelParams p;
  const InertiaCensus c = census_two_flight_family(p);
  EXPECT_NEAR(c.pivot_apex, 1.0212, 0.01);
  EXPECT_FALSE(c.joins_single_flight);
  EXPECT_FALSE(c.connecting_fold);
  for (const auto& q : c.child.points) EXPECT_EQ(q.label.kind, GaitKind::B2);
}

TEST(Bisection, LocatesASyntheticThresholdWithinTolerance) {
  const double threshold = 0.7323;
  const auto res =
      bisect_structural([threshold](double x) { return x < threshold; }, 0.5, 1.1, 5e-3);
  EXPECT_NEAR(res.J_crit, threshold, 5e-3);
  EXPECT_GE(res.probes.size(), 5u);
  EXPECT_LE(res.probes.size(), 12u);
  EXPECT_THROW(
      bisect_structural([](double) { return true; }, 0.5, 1.1, 5e-3), ConfigError);
  EXPECT_THROW(
      bisect_structural([threshold](double x) { return x < threshold; }, -1.0, 1.1, 5e-3),
      ConfigError);
}

TEST(Sweep, InertiaParameterValidation) {
  ModelParams p;
  EXPECT_THROW(with_inertia(p, Inertia::finite(-0.5)), ConfigError);
  HomotopyOptions hop;
  hop.steps = 0;
  EXPECT_THROW(continue_in_inertia(VecZ::Zero(), p, Inertia::finite(1.0), hop), ConfigError);
}
