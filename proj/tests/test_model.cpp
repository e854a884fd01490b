#include "quadgait/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"

using namespace quadgait;

namespace {

ModelParams default_params() {
  ModelParams p;
  p.validate();
  return p;
}

TEST(ModelParams, DefaultsValidate) {
  ModelParams p;
  EXPECT_NO_THROW(p.validate());
  EXPECT_TRUE(p.body_inertia.is_infinite());
  EXPECT_DOUBLE_EQ(p.leg_pair_stiffness, 20.0);
  EXPECT_NEAR(p.swing_frequency * p.swing_frequency, 5.0, 1e-15);
}

TEST(ModelParams, RejectsBadFields) {
  ModelParams p;
  p.body_mass = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = ModelParams{};
  p.hip_offset_hind = 0.2;
  EXPECT_THROW(p.validate(), ConfigError);
  p = ModelParams{};
  p.hip_offset_front = -0.1;
  EXPECT_THROW(p.validate(), ConfigError);
  p = ModelParams{};
  p.body_inertia = Inertia::finite(-1.0);
  EXPECT_THROW(p.validate(), ConfigError);
  p = ModelParams{};
  p.leg_pair_stiffness = -3.0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(ModelParams, InfiniteInertiaValueIsError) {
  EXPECT_THROW(Inertia::infinite().value(), GeometryError);
  EXPECT_DOUBLE_EQ(Inertia::finite(1.047).value(), 1.047);
}

TEST(TotalEnergy, ApexAtRest) {
  HybridState s;
  s.q[kQY] = 1.5;
  EXPECT_DOUBLE_EQ(total_energy(s, default_params()), 1.5);
}

TEST(TotalEnergy, KineticPlusPotential) {
  HybridState s;
  s.q[kQY] = 1.0;
  s.qdot[kQX] = 2.0;
  EXPECT_DOUBLE_EQ(total_energy(s, default_params()), 3.0);
}

TEST(TotalEnergy, PitchTermWithFiniteInertia) {
  ModelParams p = default_params();
  p.body_inertia = Inertia::finite(2.0);
  HybridState s;
  s.q[kQY] = 1.0;
  s.qdot[kQPhi] = 0.5;
  EXPECT_DOUBLE_EQ(total_energy(s, p), 1.0 + 0.5 * 2.0 * 0.25);
}

TEST(TotalEnergy, InfiniteInertiaRejectsPitchRate) {
  HybridState s;
  s.q[kQY] = 1.0;
  s.qdot[kQPhi] = 1e-3;
  EXPECT_THROW(total_energy(s, default_params()), GeometryError);
}

// Stance bottom of a pronk carries the same energy as its apex: the oracle
// state is built from the flight + harmonic-oscillator closed form only.
TEST(TotalEnergy, PronkBottomMatchesApex) {
  const ModelParams p = default_params();
  const auto oracle = oracles::VerticalGaitOracle::make(oracles::VerticalKind::Pronk, 1.5, p);
  const HybridState bottom = oracle.bottom_state();
  EXPECT_NEAR(total_energy(bottom, p), oracle.energy(), 1e-8);
}

TEST(LegGeometry, VerticalLegUnitLength) {
  HybridState s;
  s.q[kQY] = 1.0;
  s.phase[leg_index(Leg::Front)] = LegPhase::Stance;
  s.foothold[leg_index(Leg::Front)] = 0.5;
  const auto g = leg_geometry_stance(s, Leg::Front, default_params());
  EXPECT_NEAR(g.alpha, 0.0, 1e-15);
  EXPECT_NEAR(g.l, 1.0, 1e-15);
}

TEST(LegGeometry, PureCompression) {
  HybridState s;
  s.q[kQY] = 0.9;
  s.phase[leg_index(Leg::Front)] = LegPhase::Stance;
  s.foothold[leg_index(Leg::Front)] = 0.5;
  const auto g = leg_geometry_stance(s, Leg::Front, default_params());
  EXPECT_NEAR(g.alpha, 0.0, 1e-15);
  EXPECT_NEAR(g.l, 0.9, 1e-15);
}

// Foothold placed at 0.5 + tan(0.3): recover alpha both from the library and
// from a bisection on the foot-position equation.
TEST(LegGeometry, InclinedLegMatchesNumericInverse) {
  const ModelParams p = default_params();
  HybridState s;
  s.q[kQY] = 1.0;
  s.phase[leg_index(Leg::Front)] = LegPhase::Stance;
  const double foothold = 0.5 + std::tan(0.3);
  s.foothold[leg_index(Leg::Front)] = foothold;
  const auto g = leg_geometry_stance(s, Leg::Front, p);
  EXPECT_NEAR(g.alpha, 0.3, 1e-12);
  EXPECT_NEAR(g.l, 1.0 / std::cos(0.3), 1e-12);

  // Independent inversion of x + l_b cos(phi) + tan(alpha + phi) (y + l_b sin(phi)).
  double lo = -1.0, hi = 1.4;
  auto f = [&](double a) { return 0.5 + std::tan(a) * 1.0 - foothold; };
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(lo) * f(mid) <= 0.0 ? hi : lo) = mid;
  }
  EXPECT_NEAR(g.alpha, 0.5 * (lo + hi), 1e-10);
}

TEST(LegGeometry, RoundTripReproducesFoothold) {
  const ModelParams p = default_params();
  std::mt19937 rng(20260822);
  std::uniform_real_distribution<double> uy(0.5, 1.5), uphi(-0.3, 0.3), ua(-1.0, 1.0),
      ux(-2.0, 2.0);
  int tested = 0;
  while (tested < 100) {
    HybridState s;
    s.q[kQX] = ux(rng);
    s.q[kQY] = uy(rng);
    s.q[kQPhi] = uphi(rng);
    const Leg leg = (tested % 2 == 0) ? Leg::Front : Leg::Hind;
    const double alpha = ua(rng);
    s.q[leg_q_index(leg)] = alpha;
    if (std::cos(alpha + s.q[kQPhi]) < 0.2) continue;
    if (hip_height(s.q, leg, p) < 0.05) continue;
    const double l = leg_length_from_state(s.q, leg, p);
    if (l <= 0.05 || l > 3.0) continue;
    s.phase[leg_index(leg)] = LegPhase::Stance;
    s.foothold[leg_index(leg)] = foot_position(s.q, leg, l, p)[0];
    const auto g = leg_geometry_stance(s, leg, p);
    EXPECT_NEAR(g.alpha, alpha, 1e-12);
    EXPECT_NEAR(g.l, l, 1e-12);
    EXPECT_NEAR(foot_position(s.q, leg, g.l, p)[0], s.foothold[leg_index(leg)], 1e-12);
    ++tested;
  }
}

// Geometry rates agree with finite differences of the reconstructed
// (l, alpha) along the body's motion with the foothold fixed.
TEST(LegGeometry, RatesMatchFiniteDifferences) {
  const ModelParams p = default_params();
  std::mt19937 rng(77);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 50; ++i) {
    HybridState s;
    s.q[kQX] = u(rng);
    s.q[kQY] = 1.0 + 0.3 * u(rng);
    s.q[kQPhi] = 0.4 * u(rng);
    s.q[kQAlphaF] = u(rng);
    s.qdot = Vec5::NullaryExpr([&] { return u(rng); });
    s.phase[leg_index(Leg::Front)] = LegPhase::Stance;
    const double l = leg_length_from_state(s.q, Leg::Front, p);
    s.foothold[leg_index(Leg::Front)] = foot_position(s.q, Leg::Front, l, p)[0];

    const double h = 1e-6;
    HybridState plus = s, minus = s;
    plus.q += h * s.qdot;
    minus.q -= h * s.qdot;
    const auto gp = leg_geometry_stance(plus, Leg::Front, p);
    const auto gm = leg_geometry_stance(minus, Leg::Front, p);
    const auto g = leg_geometry_stance(s, Leg::Front, p);
    EXPECT_NEAR(g.ldot, (gp.l - gm.l) / (2 * h), 1e-7);
    EXPECT_NEAR(g.alphadot, (gp.alpha - gm.alpha) / (2 * h), 1e-7);
  }
}

TEST(LegGeometry, DegenerateHipIsError) {
  HybridState s;
  s.q[kQY] = 0.0;  // hip on the ground: leg flat
  s.phase[leg_index(Leg::Front)] = LegPhase::Stance;
  s.foothold[leg_index(Leg::Front)] = 4.0;
  EXPECT_THROW(leg_geometry_stance(s, Leg::Front, default_params()), GeometryError);
  s.q[kQY] = -0.6;  // hip below ground
  s.foothold[leg_index(Leg::Front)] = 0.5;
  EXPECT_THROW(leg_geometry_stance(s, Leg::Front, default_params()), GeometryError);
}

TEST(LegGeometry, StateAngleBeyondHorizontalIsError) {
  HybridState s;
  s.q[kQY] = 1.0;
  s.q[kQAlphaF] = 1.7;  // alpha + phi past pi/2
  EXPECT_THROW(leg_length_from_state(s.q, Leg::Front, default_params()), GeometryError);
}

}  // namespace
