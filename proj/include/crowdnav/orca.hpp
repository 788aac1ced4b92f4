#pragma once

#include <span>
#include <vector>

#include "crowdnav/vec2.hpp"

// Optimal reciprocal collision avoidance for disc agents without static
// obstacles. The LP routines follow the incremental scheme of the RVO2
// reference library.
namespace crowdnav::orca {

struct OrcaParams {
  double time_horizon = 5.0;
  double neighbor_dist = 10.0;
  int max_neighbors = 10;
  double time_step = 0.25;
  double safety_margin = 0.01;  // added to every radius
};

/// Permitted velocities lie on the left of `direction` through `point`.
struct HalfPlane {
  Vec2 point;
  Vec2 direction;  // unit length
};

/// Signed violation of a half-plane by v: positive when v is on the forbidden
/// (right) side, measured as Euclidean distance to the boundary line.
inline double violation(const HalfPlane& h, const Vec2& v) { return det(h.direction, h.point - v); }

struct AgentView {
  Vec2 position;
  Vec2 velocity;
  double radius = 0.3;
};

struct OrcaAgent {
  Vec2 position;
  Vec2 velocity;
  double radius = 0.3;
  double v_pref = 1.0;
  Vec2 goal;
};

/// Velocity of the disc of radius v_max intersected with all half-planes that
/// is closest to `preferred`. When the intersection is empty, the velocity in
/// the disc minimizing the maximum violation is returned instead.
Vec2 solve_lp(std::span<const HalfPlane> lines, const Vec2& preferred, double v_max);

/// Unit vector toward the goal scaled by v_pref, clipped so one step of
/// length `time_step` does not overshoot.
Vec2 preferred_velocity(const Vec2& position, const Vec2& goal, double v_pref, double time_step);

/// One ORCA half-plane per neighbor within neighbor_dist (closest
/// max_neighbors kept, ordered by distance).
std::vector<HalfPlane> build_constraints(const AgentView& self, std::span<const AgentView> neighbors,
                                         const OrcaParams& params);

Vec2 orca_velocity(const OrcaAgent& self, std::span<const AgentView> neighbors, const OrcaParams& params);

}  // namespace crowdnav::orca
