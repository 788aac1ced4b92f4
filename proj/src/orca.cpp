#include "crowdnav/orca.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace crowdnav::orca {

namespace {

constexpr double kEpsilon = 1e-9;

// Optimizes on line `line_no`, subject to lines [0, line_no) and the disc.
// Returns false when the line's feasible interval is empty.
bool linear_program1(std::span<const HalfPlane> lines, std::size_t line_no, double radius,
                     const Vec2& opt_velocity, bool direction_opt, Vec2& result) {
  const HalfPlane& line = lines[line_no];
  const double dot_product = dot(line.point, line.direction);
  const double discriminant = dot_product * dot_product + radius * radius - line.point.norm_sq();

  if (discriminant < 0.0) return false;  // disc misses the line entirely

  const double sqrt_disc = std::sqrt(discriminant);
  double t_left = -dot_product - sqrt_disc;
  double t_right = -dot_product + sqrt_disc;

  for (std::size_t i = 0; i < line_no; ++i) {
    const double denominator = det(line.direction, lines[i].direction);
    const double numerator = det(lines[i].direction, line.point - lines[i].point);

    if (std::abs(denominator) <= kEpsilon) {
      // Parallel lines.
      if (numerator < 0.0) return false;
      continue;
    }

    const double t = numerator / denominator;
    if (denominator >= 0.0) {
      t_right = std::min(t_right, t);
    } else {
      t_left = std::max(t_left, t);
    }
    if (t_left > t_right) return false;
  }

  if (direction_opt) {
    result = dot(opt_velocity, line.direction) > 0.0 ? line.point + t_right * line.direction
                                                     : line.point + t_left * line.direction;
  } else {
    const double t = dot(line.direction, opt_velocity - line.point);
    if (t < t_left) {
      result = line.point + t_left * line.direction;
    } else if (t > t_right) {
      result = line.point + t_right * line.direction;
    } else {
      result = line.point + t * line.direction;
    }
  }
  return true;
}

// Returns the number of lines satisfied before the first failure
// (lines.size() on success).
std::size_t linear_program2(std::span<const HalfPlane> lines, double radius, const Vec2& opt_velocity,
                            bool direction_opt, Vec2& result) {
  if (direction_opt) {
    // opt_velocity is a unit direction here.
    result = opt_velocity * radius;
  } else if (opt_velocity.norm_sq() > radius * radius) {
    result = normalized(opt_velocity) * radius;
  } else {
    result = opt_velocity;
  }

  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (det(lines[i].direction, lines[i].point - result) > 0.0) {
      const Vec2 temp = result;
      if (!linear_program1(lines, i, radius, opt_velocity, direction_opt, result)) {
        result = temp;
        return i;
      }
    }
  }
  return lines.size();
}

// Minimizes the maximum violation, starting from the first infeasible line.
void linear_program3(std::span<const HalfPlane> lines, std::size_t begin_line, double radius, Vec2& result) {
  double distance = 0.0;
  std::vector<HalfPlane> proj_lines;
  proj_lines.reserve(lines.size());

  for (std::size_t i = begin_line; i < lines.size(); ++i) {
    if (det(lines[i].direction, lines[i].point - result) <= distance) continue;

    proj_lines.clear();
    for (std::size_t j = 0; j < i; ++j) {
      HalfPlane line;
      const double determinant = det(lines[i].direction, lines[j].direction);

      if (std::abs(determinant) <= kEpsilon) {
        if (dot(lines[i].direction, lines[j].direction) > 0.0) {
          continue;  // same direction
        }
        line.point = 0.5 * (lines[i].point + lines[j].point);
      } else {
        line.point = lines[i].point +
                     (det(lines[j].direction, lines[i].point - lines[j].point) / determinant) * lines[i].direction;
      }
      line.direction = normalized(lines[j].direction - lines[i].direction);
      proj_lines.push_back(line);
    }

    const Vec2 temp = result;
    const Vec2 inward{-lines[i].direction.y, lines[i].direction.x};
    if (linear_program2(proj_lines, radius, inward, true, result) < proj_lines.size()) {
      // Only reachable through floating-point error; keep the previous result.
      result = temp;
    }
    distance = det(lines[i].direction, lines[i].point - result);
  }
}

}  // namespace

Vec2 solve_lp(std::span<const HalfPlane> lines, const Vec2& preferred, double v_max) {
  Vec2 result;
  const std::size_t fail = linear_program2(lines, v_max, preferred, false, result);
  if (fail < lines.size()) linear_program3(lines, fail, v_max, result);
  // Nearly parallel lines in the fallback can land a few ulps outside the disc.
  const double speed = result.norm();
  if (speed > v_max) result = result * (v_max / speed);
  return result;
}

Vec2 preferred_velocity(const Vec2& position, const Vec2& goal, double v_pref, double time_step) {
  const Vec2 to_goal = goal - position;
  const double dist = to_goal.norm();
  if (dist <= 0.0) return {};
  const double speed = std::min(v_pref, dist / time_step);
  return to_goal * (speed / dist);
}

std::vector<HalfPlane> build_constraints(const AgentView& self, std::span<const AgentView> neighbors,
                                         const OrcaParams& params) {
  std::vector<std::size_t> order;
  const double range_sq = params.neighbor_dist * params.neighbor_dist;
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    if ((neighbors[i].position - self.position).norm_sq() < range_sq) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return (neighbors[a].position - self.position).norm_sq() < (neighbors[b].position - self.position).norm_sq();
  });
  if (order.size() > static_cast<std::size_t>(params.max_neighbors)) order.resize(params.max_neighbors);

  const double inv_time_horizon = 1.0 / params.time_horizon;
  const double self_radius = self.radius + params.safety_margin;

  std::vector<HalfPlane> lines;
  lines.reserve(order.size());
  for (std::size_t idx : order) {
    const AgentView& other = neighbors[idx];
    const Vec2 relative_position = other.position - self.position;
    const Vec2 relative_velocity = self.velocity - other.velocity;
    const double dist_sq = relative_position.norm_sq();
    const double combined_radius = self_radius + other.radius + params.safety_margin;
    const double combined_radius_sq = combined_radius * combined_radius;

    HalfPlane line;
    Vec2 u;

    if (dist_sq > combined_radius_sq) {
      // No collision yet. w: from cutoff-circle center to relative velocity.
      const Vec2 w = relative_velocity - inv_time_horizon * relative_position;
      const double w_length_sq = w.norm_sq();
      const double dot_product1 = dot(w, relative_position);

      if (dot_product1 < 0.0 && dot_product1 * dot_product1 > combined_radius_sq * w_length_sq) {
        // Project on cutoff circle.
        const double w_length = std::sqrt(w_length_sq);
        const Vec2 unit_w = w / w_length;
        line.direction = Vec2{unit_w.y, -unit_w.x};
        u = (combined_radius * inv_time_horizon - w_length) * unit_w;
      } else {
        // Project on legs. An exactly head-on encounter (det == 0) picks the
        // left leg, which deflects the agent to its own left.
        const double leg = std::sqrt(dist_sq - combined_radius_sq);
        if (det(relative_position, w) >= 0.0) {
          line.direction = Vec2{relative_position.x * leg - relative_position.y * combined_radius,
                                relative_position.x * combined_radius + relative_position.y * leg} /
                           dist_sq;
        } else {
          line.direction = -Vec2{relative_position.x * leg + relative_position.y * combined_radius,
                                 -relative_position.x * combined_radius + relative_position.y * leg} /
                           dist_sq;
        }
        const double dot_product2 = dot(relative_velocity, line.direction);
        u = dot_product2 * line.direction - relative_velocity;
      }
    } else {
      // Already overlapping: resolve within one time step.
      const double inv_time_step = 1.0 / params.time_step;
      const Vec2 w = relative_velocity - inv_time_step * relative_position;
      const double w_length = w.norm();
      const Vec2 unit_w = w_length > 0.0 ? w / w_length : Vec2{1.0, 0.0};
      line.direction = Vec2{unit_w.y, -unit_w.x};
      u = (combined_radius * inv_time_step - w_length) * unit_w;
    }

    line.point = self.velocity + 0.5 * u;
    lines.push_back(line);
  }
  return lines;
}

Vec2 orca_velocity(const OrcaAgent& self, std::span<const AgentView> neighbors, const OrcaParams& params) {
  const AgentView view{self.position, self.velocity, self.radius};
  const std::vector<HalfPlane> lines = build_constraints(view, neighbors, params);
  const Vec2 preferred = preferred_velocity(self.position, self.goal, self.v_pref, params.time_step);
  return solve_lp(lines, preferred, self.v_pref);
}

}  // namespace crowdnav::orca
