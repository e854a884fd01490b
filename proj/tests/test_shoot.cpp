#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "quadgait/shoot.hpp"

using namespace quadgait;
using oracles::VerticalGaitOracle;
using oracles::VerticalKind;

namespace {

VecZ vertical_z(const VerticalGaitOracle& o) {
  VecZ Z = VecZ::Zero();
  Z[kZy0] = o.y0;
  Z[kZtHtd] = o.t_Htd;
  Z[kZtHlo] = o.t_Hlo;
  Z[kZtFtd] = o.t_Ftd;
  Z[kZtFlo] = o.t_Flo;
  Z[kZtStride] = o.period;
  return Z;
}

VecZ noisy(const VecZ& Z, double scale, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VecZ out = Z;
  for (int i = 0; i < kZdim; ++i) out[i] += scale * u(rng);
  return out;
}

}  // namespace

TEST(Layout, ActiveCountsFollowInertiaMode) {
  ModelParams inf;  // default: frozen pitch
  ModelParams fin;
  fin.body_inertia = Inertia::finite(1.0);

  const ActiveLayout li = ActiveLayout::of(inf);
  const ActiveLayout lf = ActiveLayout::of(fin);
  EXPECT_EQ(li.active_count(), 11);
  EXPECT_EQ(li.residual_count(), 12);
  EXPECT_EQ(lf.active_count(), 13);
  EXPECT_EQ(lf.residual_count(), 14);

  VecZ Z = VecZ::Ones();
  const VecZ rt = li.unpack(li.pack(Z));
  EXPECT_EQ(rt[kZphi0], 0.0);
  EXPECT_EQ(rt[kZphidot0], 0.0);
  EXPECT_EQ(rt[kZydot0], 0.0);
  EXPECT_EQ(rt[kZy0], 1.0);
  const VecZ rtf = lf.unpack(lf.pack(Z));
  EXPECT_EQ(rtf[kZphi0], 1.0);
  EXPECT_EQ(rtf[kZydot0], 0.0);
}

TEST(Residual, PronkOracleIsNearZero) {
  ModelParams p;
  for (double apex : {1.1, 1.5, 3.0, 8.0}) {
    const auto o = VerticalGaitOracle::make(VerticalKind::Pronk, apex, p);
    const Eigen::VectorXd R = residual(vertical_z(o), p);
    EXPECT_LT(R.cwiseAbs().maxCoeff(), 1e-7) << "apex " << apex;
  }
}

TEST(Residual, BoundOracleIsNearZero) {
  ModelParams p;
  for (double apex : {1.1, 1.5, 3.0}) {
    const auto o = VerticalGaitOracle::make(VerticalKind::Bound, apex, p);
    const Eigen::VectorXd R = residual(vertical_z(o), p);
    EXPECT_LT(R.cwiseAbs().maxCoeff(), 1e-7) << "apex " << apex;
  }
}

TEST(Residual, PublishedFiniteInertiaBoundingPoint) {
  // Rounded reference point of a bounding gait with gathered suspension at
  // J = 1.047, two decimals in every entry. This exercises every pitch and
  // swing coupling term at once. Rounding of the fast swing rates alone
  // amplifies to a few 1e-2 in the defect, so the sharp check is that
  // Newton started AT the rounded point lands on a true solution whose
  // every entry agrees with the reference within its rounding.
  ModelParams p;
  p.body_inertia = Inertia::finite(1.047);
  VecZ Z = VecZ::Zero();
  Z[kZxdot0] = 4.34;
  Z[kZy0] = 1.09;
  Z[kZphidot0] = 0.20;
  Z[kZalphaH0] = 1.30;
  Z[kZalphadotH0] = 1.38;
  Z[kZalphaF0] = -1.30;
  Z[kZalphadotF0] = 1.38;
  Z[kZtHtd] = 0.72;
  Z[kZtHlo] = 1.04;
  Z[kZtFtd] = 1.56;
  Z[kZtFlo] = 1.88;
  Z[kZtStride] = 2.60;

  const Eigen::VectorXd R = residual(Z, p);
  EXPECT_EQ(R.size(), 14);
  EXPECT_LT(R.cwiseAbs().maxCoeff(), 5e-2);

  const VecZ Zs = solve(Z, p, {[](const VecZ& z) { return z[kZxdot0] - 4.34; }});
  EXPECT_LT((Zs - Z).cwiseAbs().maxCoeff(), 6e-3);
  // The converged gait keeps the symmetric bounding structure.
  EXPECT_NEAR(Zs[kZphi0], 0.0, 1e-6);
  EXPECT_NEAR(Zs[kZalphaF0], -Zs[kZalphaH0], 1e-6);
  EXPECT_NEAR(Zs[kZalphadotF0], Zs[kZalphadotH0], 1e-6);
}

TEST(Residual, GrowsLinearlyUnderSmallPerturbation) {
  ModelParams p;
  const auto o = VerticalGaitOracle::make(VerticalKind::Pronk, 1.5, p);
  const VecZ Z = vertical_z(o);
  VecZ Za = Z, Zb = Z;
  Za[kZy0] += 1e-4;
  Zb[kZy0] += 2e-4;
  const double ra = residual(Za, p).norm();
  const double rb = residual(Zb, p).norm();
  EXPECT_GT(ra, 1e-6);
  EXPECT_NEAR(rb / ra, 2.0, 0.2);
}

TEST(Jacobian, MatchesDirectionalDerivative) {
  ModelParams p;
  const auto o = VerticalGaitOracle::make(VerticalKind::Pronk, 1.5, p);
  const VecZ Z = vertical_z(o);
  const ActiveLayout lay = ActiveLayout::of(p);
  const Eigen::MatrixXd J = jacobian(Z, p);
  ASSERT_EQ(J.rows(), 12);
  ASSERT_EQ(J.cols(), 11);

  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd v(lay.active_count());
  for (int i = 0; i < v.size(); ++i) v[i] = u(rng);
  v.normalize();

  for (double h : {1e-5, 1e-6}) {
    const VecZ Zp = lay.unpack(lay.pack(Z) + h * v);
    const VecZ Zm = lay.unpack(lay.pack(Z) - h * v);
    const Eigen::VectorXd fd = (residual(Zp, p) - residual(Zm, p)) / (2.0 * h);
    const double rel = (J * v - fd).norm() / fd.norm();
    EXPECT_LT(rel, 1e-4) << "h = " << h;
  }
}

TEST(Jacobian, ConservativeFamilyRankDeficit) {
  // Periodic solutions of a conservative system come in one-parameter
  // (energy) families: the Jacobian at a solution must lose one rank.
  ModelParams p;
  const auto o = VerticalGaitOracle::make(VerticalKind::Pronk, 1.5, p);
  const Eigen::MatrixXd J = jacobian(vertical_z(o), p);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(J);
  const auto& s = svd.singularValues();
  EXPECT_LT(s[s.size() - 1], 1e-4 * s[0]);
  EXPECT_GT(s[s.size() - 2], 1e-4 * s[0]);  // only one lost direction here
}

TEST(Solve, NoisyGuessReconvergesWithHeightPinned) {
  ModelParams p;
  const auto o = VerticalGaitOracle::make(VerticalKind::Pronk, 1.5, p);
  const VecZ Z0 = vertical_z(o);
  const VecZ guess = noisy(Z0, 1e-3, 11);
  const std::vector<ConstraintFn> cons{
      [](const VecZ& z) { return z[kZy0] - 1.5; }};

  SolveReport rep;
  const VecZ Z = solve(guess, p, cons, {}, {}, &rep);
  EXPECT_TRUE(rep.converged);
  EXPECT_LT((Z - Z0).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Solve, EmptyConstraintsLandOnFamily) {
  ModelParams p;
  const auto o = VerticalGaitOracle::make(VerticalKind::Pronk, 1.5, p);
  const VecZ guess = noisy(vertical_z(o), 1e-3, 13);
  const VecZ Z = solve(guess, p);
  EXPECT_LT(residual(Z, p).cwiseAbs().maxCoeff(), 1e-9);
  // The family is vertical in-place pronking: no lateral motion appears.
  EXPECT_NEAR(Z[kZalphaF0], 0.0, 1e-6);
  EXPECT_NEAR(Z[kZalphaH0], 0.0, 1e-6);
  EXPECT_NEAR(Z[kZxdot0], 0.0, 1e-6);
}

TEST(Solve, PinnedApexKeepsSymmetricRest) {
  ModelParams p;
  const auto o = VerticalGaitOracle::make(VerticalKind::Pronk, 1.71, p);
  const VecZ guess = noisy(vertical_z(o), 1e-3, 17);
  const std::vector<ConstraintFn> cons{
      [](const VecZ& z) { return z[kZy0] - 1.71; }};
  const VecZ Z = solve(guess, p, cons);
  EXPECT_NEAR(Z[kZy0], 1.71, 1e-12);
  for (int i : {kZalphaF0, kZalphaH0, kZxdot0, kZalphadotF0, kZalphadotH0})
    EXPECT_NEAR(Z[i], 0.0, 1e-8) << "slot " << i;
}

TEST(Solve, ConvergedSolutionReplaysInFreeMode) {
  ModelParams p;
  const auto o = VerticalGaitOracle::make(VerticalKind::Pronk, 1.5, p);
  const VecZ Z = solve(noisy(vertical_z(o), 1e-3, 19), p,
                       {[](const VecZ& z) { return z[kZy0] - 1.5; }});

  const HybridState s0 = initial_state_of(Z, p);
  const Trajectory traj = simulate_free(s0, Z[kZtStride], p);
  const HybridState s1 = traj.final_state();
  EXPECT_NEAR(s1.y(), s0.y(), 1e-6);
  EXPECT_NEAR(s1.pitch(), s0.pitch(), 1e-6);
  EXPECT_NEAR(s1.leg_angle(Leg::Front), s0.leg_angle(Leg::Front), 1e-6);
  EXPECT_NEAR(s1.leg_angle(Leg::Hind), s0.leg_angle(Leg::Hind), 1e-6);
  EXPECT_LT((s1.qdot - s0.qdot).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Solve, ResidualDropsSuperlinearly) {
  ModelParams p;
  const auto o = VerticalGaitOracle::make(VerticalKind::Pronk, 1.5, p);
  SolveReport rep;
  solve(noisy(vertical_z(o), 1e-3, 23), p,
        {[](const VecZ& z) { return z[kZy0] - 1.5; }}, {}, {}, &rep);

  bool superlinear = false;
  for (std::size_t i = 0; i + 1 < rep.residual_norms.size(); ++i) {
    const double a = rep.residual_norms[i], b = rep.residual_norms[i + 1];
    if (a < 1e-3 && a > 1e-13 && b < std::pow(a, 1.4)) superlinear = true;
  }
  EXPECT_TRUE(superlinear);
  EXPECT_LT(rep.residual_norms.back(), 1e-9);
}

TEST(Solve, FilterRejectionIsAnError) {
  ModelParams p;
  const auto o = VerticalGaitOracle::make(VerticalKind::Pronk, 1.5, p);
  const std::vector<FilterFn> filters{[](const VecZ&) { return false; }};
  EXPECT_THROW(solve(vertical_z(o), p, {}, filters), ConvergenceError);
}
