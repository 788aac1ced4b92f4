#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "crowdnav/orca.hpp"
#include "crowdnav/random.hpp"
#include "oracles.hpp"

using namespace crowdnav;
using namespace crowdnav::orca;

namespace {

HalfPlane line_through(Vec2 p, double angle) { return HalfPlane{p, from_polar(1.0, angle)}; }

std::vector<HalfPlane> random_lines(Rng& rng, int count) {
  std::vector<HalfPlane> lines;
  for (int i = 0; i < count; ++i) lines.push_back(line_through(from_polar(uniform(rng, 0, 1.2), uniform(rng, 0, kTwoPi)),
                                                               uniform(rng, 0, kTwoPi)));
  return lines;
}

double max_violation(const std::vector<HalfPlane>& lines, const Vec2& v) {
  return oracle::max_violation(lines, v.x, v.y);
}

/// Smallest separation over [0, horizon] of two discs moving at constant velocity.
double min_separation(Vec2 pa, Vec2 va, Vec2 pb, Vec2 vb, double horizon) {
  double best = 1e300;
  for (int i = 0; i <= 20000; ++i) {
    const double t = horizon * i / 20000.0;
    best = std::min(best, ((pb + vb * t) - (pa + va * t)).norm());
  }
  return best;
}

}  // namespace

TEST(SolveLp, UnconstrainedIsIdentity) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vec2 v = from_polar(uniform(rng, 0, 1.0), uniform(rng, 0, kTwoPi));
    const Vec2 out = solve_lp({}, v, 1.0);
    EXPECT_EQ(out, v);
  }
}

TEST(SolveLp, ClipsToDisc) {
  const Vec2 out = solve_lp({}, {3.0, 4.0}, 1.0);
  EXPECT_NEAR(out.x, 0.6, 1e-12);
  EXPECT_NEAR(out.y, 0.8, 1e-12);
}

TEST(SolveLp, SingleLineProjects) {
  // Permitted side is y >= 0.2 (left of +x direction).
  const std::vector<HalfPlane> lines{line_through({0.0, 0.2}, 0.0)};
  const Vec2 out = solve_lp(lines, {0.3, -0.5}, 1.0);
  EXPECT_NEAR(out.x, 0.3, 1e-12);
  EXPECT_NEAR(out.y, 0.2, 1e-12);
  const auto grid = oracle::lp_grid(lines, 0.3, -0.5, 1.0, 1000);
  ASSERT_TRUE(grid.feasible);
  EXPECT_LE((out - Vec2{0.3, -0.5}).norm(), grid.objective + 1e-12);
  EXPECT_NEAR((out - Vec2{0.3, -0.5}).norm(), grid.objective, 2.0 / 999.0);
}

TEST(SolveLp, ProjectionClippedToDisc) {
  const std::vector<HalfPlane> lines{line_through({0.0, 0.8}, 0.0)};
  const Vec2 out = solve_lp(lines, {2.0, 0.0}, 1.0);
  EXPECT_NEAR(out.norm(), 1.0, 1e-12);
  EXPECT_NEAR(out.y, 0.8, 1e-12);
  EXPECT_NEAR(out.x, 0.6, 1e-12);
}

TEST(SolveLp, InfeasiblePairFallsBack) {
  // y >= 0.5 and y <= -0.5 cannot both hold; the fallback splits the difference.
  const std::vector<HalfPlane> lines{line_through({0.0, 0.5}, 0.0), line_through({0.0, -0.5}, M_PI)};
  const Vec2 out = solve_lp(lines, {0.2, 0.9}, 1.0);
  EXPECT_NEAR(max_violation(lines, out), 0.5, 1e-9);
  const auto grid = oracle::lp_grid(lines, 0.2, 0.9, 1.0, 1000);
  ASSERT_FALSE(grid.feasible);
  EXPECT_LE(max_violation(lines, out), grid.objective + 1e-12);
}

TEST(SolveLp, AgreesWithGridOracle) {
  Rng rng(2024);
  const double h = 2.0 / 399.0;
  for (int trial = 0; trial < 60; ++trial) {
    const auto lines = random_lines(rng, 1 + trial % 6);
    const Vec2 pref = from_polar(uniform(rng, 0, 1.3), uniform(rng, 0, kTwoPi));
    const Vec2 out = solve_lp(lines, pref, 1.0);
    ASSERT_LE(out.norm(), 1.0 + 1e-9);
    const auto grid = oracle::lp_grid(lines, pref.x, pref.y, 1.0, 400);
    const double viol = max_violation(lines, out);
    if (grid.feasible) {
      // No grid sample beats the solver; the exact enumeration matches it.
      EXPECT_LE(viol, 1e-9) << "trial " << trial;
      EXPECT_LE((out - pref).norm(), grid.objective + 1e-12) << "trial " << trial;
      const auto exact = oracle::lp_exact(lines, pref.x, pref.y, 1.0);
      ASSERT_TRUE(exact.feasible) << "trial " << trial;
      EXPECT_NEAR(out.x, exact.x, 1e-9) << "trial " << trial;
      EXPECT_NEAR(out.y, exact.y, 1e-9) << "trial " << trial;
    } else if (viol > 1e-9) {
      EXPECT_LE(viol, grid.objective + 1e-12) << "trial " << trial;
      EXPECT_GE(viol, grid.objective - h) << "trial " << trial;
    } else {
      // Feasible sliver thinner than the grid.
      EXPECT_LE(grid.objective, h) << "trial " << trial;
    }
  }
}

TEST(Orca, NoNeighborsGivesPreferredVelocity) {
  OrcaParams p;
  OrcaAgent a{{0, 0}, {0, 0}, 0.3, 1.0, {3, 4}};
  const Vec2 v = orca_velocity(a, {}, p);
  EXPECT_NEAR(v.x, 0.6, 1e-12);
  EXPECT_NEAR(v.y, 0.8, 1e-12);
}

TEST(Orca, PreferredVelocityDoesNotOvershoot) {
  const Vec2 v = preferred_velocity({0, 0}, {0.1, 0}, 1.0, 0.25);
  EXPECT_NEAR(v.x * 0.25, 0.1, 1e-12);
}

TEST(Orca, FarNeighborIgnored) {
  OrcaParams p;
  OrcaAgent a{{0, 0}, {1, 0}, 0.3, 1.0, {5, 0}};
  const std::vector<AgentView> n{{{10.5, 0}, {-1, 0}, 0.3}};
  EXPECT_TRUE(build_constraints({a.position, a.velocity, a.radius}, n, p).empty());
  const Vec2 v = orca_velocity(a, n, p);
  EXPECT_NEAR(v.x, 1.0, 1e-12);
  EXPECT_NEAR(v.y, 0.0, 1e-12);
}

TEST(Orca, HeadOnIsMirroredAndSafe) {
  OrcaParams p;
  const OrcaAgent a{{-2, 0}, {1, 0}, 0.3, 1.0, {2, 0}};
  const OrcaAgent b{{2, 0}, {-1, 0}, 0.3, 1.0, {-2, 0}};
  const std::vector<AgentView> na{{b.position, b.velocity, b.radius}};
  const std::vector<AgentView> nb{{a.position, a.velocity, a.radius}};
  const Vec2 va = orca_velocity(a, na, p);
  const Vec2 vb = orca_velocity(b, nb, p);
  EXPECT_NEAR(va.x, -vb.x, 1e-12);
  EXPECT_NEAR(va.y, -vb.y, 1e-12);
  // Each one swerves to its own left.
  EXPECT_GT(va.y, 0.0);
  EXPECT_LT(vb.y, 0.0);
  const double gap = min_separation(a.position, va, b.position, vb, p.time_horizon);
  EXPECT_GE(gap, a.radius + b.radius - 1e-6);
}

TEST(Orca, SwappingAgentsSwapsOutputs) {
  OrcaParams p;
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec2 pos = from_polar(uniform(rng, 0.7, 4.0), uniform(rng, 0, kTwoPi));
    const Vec2 vel = from_polar(uniform(rng, 0, 1.0), uniform(rng, 0, kTwoPi));
    const Vec2 goal = from_polar(uniform(rng, 0.5, 5.0), uniform(rng, 0, kTwoPi));
    const OrcaAgent a{pos, vel, 0.3, 1.0, goal};
    const OrcaAgent b{-pos, -vel, 0.3, 1.0, -goal};
    const Vec2 va = orca_velocity(a, std::vector<AgentView>{{b.position, b.velocity, b.radius}}, p);
    const Vec2 vb = orca_velocity(b, std::vector<AgentView>{{a.position, a.velocity, a.radius}}, p);
    ASSERT_NEAR(va.x, -vb.x, 1e-9);
    ASSERT_NEAR(va.y, -vb.y, 1e-9);
  }
}

TEST(Orca, PairwiseVelocitiesAvoidCollision) {
  // Two agents that both follow ORCA stay apart for the whole horizon.
  OrcaParams p;
  Rng rng(99);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const Vec2 pa{uniform(rng, -3, 3), uniform(rng, -3, 3)};
    const Vec2 pb{uniform(rng, -3, 3), uniform(rng, -3, 3)};
    if ((pa - pb).norm() < 0.7) continue;
    const OrcaAgent a{pa, from_polar(uniform(rng, 0, 1), uniform(rng, 0, kTwoPi)), 0.3, 1.0,
                      {uniform(rng, -5, 5), uniform(rng, -5, 5)}};
    const OrcaAgent b{pb, from_polar(uniform(rng, 0, 1), uniform(rng, 0, kTwoPi)), 0.3, 1.0,
                      {uniform(rng, -5, 5), uniform(rng, -5, 5)}};
    const Vec2 va = orca_velocity(a, std::vector<AgentView>{{b.position, b.velocity, b.radius}}, p);
    const Vec2 vb = orca_velocity(b, std::vector<AgentView>{{a.position, a.velocity, a.radius}}, p);
    ASSERT_LE(va.norm(), 1.0 + 1e-9);
    ASSERT_LE(vb.norm(), 1.0 + 1e-9);
    ++checked;
    EXPECT_GE(min_separation(pa, va, pb, vb, p.time_horizon), 0.6 - 1e-6) << "trial " << trial;
  }
  EXPECT_GT(checked, 200);
}

TEST(Orca, NeighborCountIsCapped) {
  OrcaParams p;
  p.max_neighbors = 3;
  std::vector<AgentView> n;
  for (int i = 0; i < 8; ++i) n.push_back({from_polar(1.0 + i, 0.3 * i), {}, 0.3});
  const auto lines = build_constraints({{0, 0}, {0, 0}, 0.3}, n, p);
  EXPECT_EQ(lines.size(), 3u);
  for (const auto& l : lines) EXPECT_NEAR(l.direction.norm(), 1.0, 1e-9);
}
