#include "crowdnav/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "crowdnav/orca.hpp"

namespace crowdnav::env {

// ---------------------------------------------------------------------------
// Actions

ActionSet::ActionSet(double v_pref, SpeedSpacing spacing) : v_pref_(v_pref) {
  if (!(v_pref > 0.0)) throw std::invalid_argument("ActionSet: v_pref must be positive");
  actions_.reserve(kSize);
  actions_.push_back(Action{0.0, 0.0});
  for (std::size_t i = 1; i <= kSpeedCount; ++i) {
    const double frac = static_cast<double>(i) / kSpeedCount;
    const double speed =
        spacing == SpeedSpacing::linear ? frac * v_pref : (std::exp(frac) - 1.0) / (std::exp(1.0) - 1.0) * v_pref;
    for (std::size_t j = 0; j < kSteeringCount; ++j) {
      actions_.push_back(Action{speed, kTwoPi * static_cast<double>(j) / kSteeringCount});
    }
  }
}

std::optional<std::size_t> ActionSet::index_of(const Action& a) const {
  const auto it = std::find(actions_.begin(), actions_.end(), a);
  if (it == actions_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - actions_.begin());
}

Vec2 ActionSet::commanded_velocity(const Action& a, double heading) {
  return from_polar(a.speed, heading + a.steering);
}

std::size_t ActionSet::nearest(const Vec2& velocity, double heading) const {
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < actions_.size(); ++i) {
    const double d = (commanded_velocity(actions_[i], heading) - velocity).norm_sq();
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  return best;
}

ActionSet build_action_space(double v_pref, SpeedSpacing spacing) { return ActionSet(v_pref, spacing); }

// ---------------------------------------------------------------------------
// Enums

std::string to_string(OutcomeKind kind) {
  switch (kind) {
    case OutcomeKind::success: return "success";
    case OutcomeKind::collision: return "collision";
    case OutcomeKind::timeout: return "timeout";
  }
  return "unknown";
}

OutcomeKind outcome_from_string(const std::string& s) {
  if (s == "success") return OutcomeKind::success;
  if (s == "collision") return OutcomeKind::collision;
  if (s == "timeout") return OutcomeKind::timeout;
  throw std::invalid_argument("unknown outcome '" + s + "'");
}

std::string to_string(ScenarioKind kind) { return kind == ScenarioKind::circle ? "circle" : "square"; }

ScenarioKind scenario_from_string(const std::string& s) {
  if (s == "circle") return ScenarioKind::circle;
  if (s == "square") return ScenarioKind::square;
  throw std::invalid_argument("unknown scenario '" + s + "' (expected circle|square)");
}

// ---------------------------------------------------------------------------
// Config

int EnvConfig::max_steps() const { return static_cast<int>(std::lround(time_limit / dt)); }

void EnvConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("env config: ") + what);
  };
  require(dt > 0.0, "dt must be positive");
  require(time_limit > 0.0, "time_limit must be positive");
  require(std::abs(time_limit / dt - std::round(time_limit / dt)) < 1e-9, "time_limit must be a multiple of dt");
  require(num_humans >= 0, "num_humans must be nonnegative");
  require(circle_radius > 0.0 && square_half_side > 0.0, "room dimensions must be positive");
  require(human_radius > 0.0 && robot_radius > 0.0, "radii must be positive");
  require(human_v_pref > 0.0 && robot_v_pref > 0.0, "preferred speeds must be positive");
  require(!goal_tolerance || *goal_tolerance > 0.0, "goal_tolerance must be positive");
  require(gamma >= 0.0 && gamma <= 1.0, "gamma must lie in [0, 1]");
  require(orca_time_horizon > 0.0 && orca_neighbor_dist > 0.0 && orca_max_neighbors > 0,
          "orca parameters must be positive");
  require(orca_safety_margin >= 0.0 && robot_orca_safety_space >= 0.0, "orca safety margins must be nonnegative");
}

// ---------------------------------------------------------------------------
// Dynamics, reward, outcome

RobotState step_kinematics(const RobotState& robot, const Action& a, double dt) {
  RobotState next = robot;
  // Planar velocity uses the heading before this step's steering.
  next.velocity = Vec2{a.speed * std::cos(robot.heading), a.speed * std::sin(robot.heading)};
  next.position = robot.position + next.velocity * dt;
  next.heading = wrap_angle(robot.heading + a.steering);
  return next;
}

double distance_to_goal(const RobotState& robot) { return (robot.goal - robot.position).norm(); }

double clearance(const RobotState& robot, const HumanState& human) {
  return (human.position - robot.position).norm() - robot.radius - human.radius;
}

double compute_reward(const JointState& s, const JointState& s_next, std::optional<OutcomeKind> outcome) {
  if (outcome == OutcomeKind::success) return 0.25;
  if (outcome == OutcomeKind::collision) return -0.25;

  const double delta_goal = distance_to_goal(s_next.robot) - distance_to_goal(s.robot);
  double reward = -0.2 * delta_goal;
  for (const HumanState& h : s_next.humans) {
    const double mu = clearance(s_next.robot, h);
    if (mu < 0.2) reward += mu - 0.2;
  }
  return reward;
}

std::optional<OutcomeKind> detect_outcome(const JointState& s, const EnvConfig& cfg) {
  for (const HumanState& h : s.humans) {
    if ((h.position - s.robot.position).norm() < s.robot.radius + h.radius) return OutcomeKind::collision;
  }
  if (distance_to_goal(s.robot) < cfg.goal_radius()) return OutcomeKind::success;
  if (s.time >= cfg.time_limit - 1e-9) return OutcomeKind::timeout;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Scenarios

namespace {

struct Placed {
  Vec2 position;
  Vec2 goal;
  double radius;
};

bool conflicts(const std::vector<Placed>& placed, const Vec2& pos, const Vec2& goal, double radius, double discomfort) {
  return std::any_of(placed.begin(), placed.end(), [&](const Placed& p) {
    const double min_dist = radius + p.radius + discomfort;
    return (pos - p.position).norm() < min_dist || (goal - p.goal).norm() < min_dist;
  });
}

constexpr int kMaxPlacementAttempts = 100000;

void place_circle_human(const EnvConfig& cfg, Rng& rng, std::vector<Placed>& placed) {
  for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
    const double angle = uniform(rng, 0.0, kTwoPi);
    const Vec2 pos = from_polar(cfg.circle_radius, angle);
    const Vec2 goal = -pos;
    if (!conflicts(placed, pos, goal, cfg.human_radius, cfg.discomfort_dist)) {
      placed.push_back({pos, goal, cfg.human_radius});
      return;
    }
  }
  throw std::runtime_error("generate_scenario: could not place circle human");
}

void place_crossing_human(const EnvConfig& cfg, Rng& rng, std::vector<Placed>& placed) {
  const double half = cfg.square_half_side;
  for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
    const double sign = uniform(rng, 0.0, 1.0) > 0.5 ? -1.0 : 1.0;
    const Vec2 pos{uniform(rng, 0.0, 1.0) * half * sign, uniform(rng, -half, half)};
    const Vec2 goal{uniform(rng, 0.0, 1.0) * half * -sign, uniform(rng, -half, half)};
    if (!conflicts(placed, pos, goal, cfg.human_radius, cfg.discomfort_dist)) {
      placed.push_back({pos, goal, cfg.human_radius});
      return;
    }
  }
  throw std::runtime_error("generate_scenario: could not place crossing human");
}

Vec2 sample_new_goal(const EnvConfig& cfg, const Vec2& from, Rng& rng) {
  const double half = cfg.square_half_side;
  for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
    const Vec2 goal{uniform(rng, -half, half), uniform(rng, -half, half)};
    if ((goal - from).norm() >= cfg.min_goal_jump) return goal;
  }
  return -from;
}

}  // namespace

Scenario generate_scenario(ScenarioKind kind, const EnvConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);

  Scenario sc;
  RobotState& robot = sc.state.robot;
  robot.position = Vec2{0.0, -cfg.circle_radius};
  robot.goal = Vec2{0.0, cfg.circle_radius};
  robot.velocity = Vec2{};
  robot.radius = cfg.robot_radius;
  robot.v_pref = cfg.robot_v_pref;
  robot.heading = wrap_angle(std::atan2(robot.goal.y - robot.position.y, robot.goal.x - robot.position.x));

  std::vector<Placed> placed{{robot.position, robot.goal, robot.radius}};
  const int n = cfg.num_humans;
  const int circle_count = kind == ScenarioKind::circle ? (n + 1) / 2 : 0;
  for (int i = 0; i < n; ++i) {
    if (i < circle_count) {
      place_circle_human(cfg, rng, placed);
    } else {
      place_crossing_human(cfg, rng, placed);
    }
  }

  for (std::size_t i = 1; i < placed.size(); ++i) {
    sc.state.humans.push_back(HumanState{placed[i].position, Vec2{}, placed[i].radius});
    sc.human_goals.push_back(placed[i].goal);
    sc.human_v_pref.push_back(cfg.human_v_pref);
  }
  sc.state.time = 0.0;
  return sc;
}

// ---------------------------------------------------------------------------
// Features

std::vector<float> encode_state(const JointState& s) {
  const RobotState& r = s.robot;
  const Vec2 to_goal = r.goal - r.position;
  const double rot = std::atan2(to_goal.y, to_goal.x);
  const Vec2 v = rotated(r.velocity, -rot);

  std::vector<float> out;
  out.reserve(feature_size(s.humans.size()));
  out.push_back(static_cast<float>(to_goal.norm()));
  out.push_back(static_cast<float>(r.v_pref));
  out.push_back(static_cast<float>(wrap_signed_angle(r.heading - rot)));
  out.push_back(static_cast<float>(v.x));
  out.push_back(static_cast<float>(v.y));
  out.push_back(static_cast<float>(r.radius));

  std::vector<std::size_t> order(s.humans.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> dist(s.humans.size());
  for (std::size_t i = 0; i < s.humans.size(); ++i) dist[i] = (s.humans[i].position - r.position).norm();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

  for (std::size_t i : order) {
    const HumanState& h = s.humans[i];
    const Vec2 rel = rotated(h.position - r.position, -rot);
    const Vec2 hv = rotated(h.velocity, -rot);
    out.push_back(static_cast<float>(rel.x));
    out.push_back(static_cast<float>(rel.y));
    out.push_back(static_cast<float>(hv.x));
    out.push_back(static_cast<float>(hv.y));
    out.push_back(static_cast<float>(h.radius));
    out.push_back(static_cast<float>(dist[i]));
    out.push_back(static_cast<float>(h.radius + r.radius));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulation

CrowdSim::CrowdSim(EnvConfig cfg, ScenarioKind kind, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      actions_(cfg_.robot_v_pref, cfg_.speed_spacing),
      goal_rng_(derive_seed(seed, SeedStream::human_goals)) {
  Scenario sc = generate_scenario(kind, cfg_, seed);
  state_ = std::move(sc.state);
  goals_ = std::move(sc.human_goals);
  human_v_pref_ = std::move(sc.human_v_pref);
}

std::vector<Vec2> CrowdSim::human_velocities() const {
  const orca::OrcaParams params{cfg_.orca_time_horizon, cfg_.orca_neighbor_dist, cfg_.orca_max_neighbors, cfg_.dt,
                                cfg_.orca_safety_margin};
  const std::size_t n = state_.humans.size();
  std::vector<orca::AgentView> views(n);
  for (std::size_t i = 0; i < n; ++i) {
    const HumanState& h = state_.humans[i];
    views[i] = orca::AgentView{h.position, h.velocity, h.radius};
  }

  std::vector<Vec2> out(n);
  std::vector<orca::AgentView> neighbors;
  neighbors.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    neighbors.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) neighbors.push_back(views[j]);
    }
    const HumanState& h = state_.humans[i];
    const orca::OrcaAgent self{h.position, h.velocity, h.radius, human_v_pref_[i], goals_[i]};
    out[i] = orca::orca_velocity(self, neighbors, params);
  }
  return out;
}

StepRecord CrowdSim::step(const RobotCommand& command) {
  if (done()) throw std::logic_error("CrowdSim::step called after the episode terminated");

  StepRecord rec;
  rec.state = state_;
  rec.command = command;

  JointState next = state_;
  if (const auto* a = std::get_if<Action>(&command)) {
    const auto idx = actions_.index_of(*a);
    if (!idx) throw ContractViolation("policy returned an action outside the action set");
    rec.action_index = *idx;
    next.robot = step_kinematics(state_.robot, *a, cfg_.dt);
  } else {
    const Vec2 v = std::get<HolonomicVelocity>(command).velocity;
    if (!(v.norm() <= state_.robot.v_pref + 1e-9)) {
      throw ContractViolation("holonomic command exceeds the robot's preferred speed");
    }
    rec.action_index = actions_.nearest(v, state_.robot.heading);
    next.robot.velocity = v;
    next.robot.position = state_.robot.position + v * cfg_.dt;
    if (v.norm_sq() > 0.0) next.robot.heading = wrap_angle(std::atan2(v.y, v.x));
  }

  const std::vector<Vec2> velocities = human_velocities();
  for (std::size_t i = 0; i < next.humans.size(); ++i) {
    next.humans[i].velocity = velocities[i];
    next.humans[i].position = state_.humans[i].position + velocities[i] * cfg_.dt;
  }

  ++step_count_;
  next.time = step_count_ * cfg_.dt;

  outcome_ = detect_outcome(next, cfg_);
  rec.reward = compute_reward(state_, next, outcome_);
  rec.terminal = outcome_.has_value();

  for (std::size_t i = 0; i < next.humans.size(); ++i) {
    if ((next.humans[i].position - goals_[i]).norm() < next.humans[i].radius) {
      goals_[i] = sample_new_goal(cfg_, next.humans[i].position, goal_rng_);
    }
  }

  state_ = next;
  rec.next_state = std::move(next);
  return rec;
}

EpisodeRecord run_episode(const RobotPolicy& policy, ScenarioKind kind, const EnvConfig& cfg, std::uint64_t seed) {
  CrowdSim sim(cfg, kind, seed);
  EpisodeRecord record;
  record.trajectory.push_back(Frame{sim.state(), sim.human_goals()});

  double discount = 1.0;
  while (!sim.done()) {
    StepRecord step = sim.step(policy(sim.state()));
    record.outcome.discounted_return += discount * step.reward;
    record.outcome.undiscounted_return += step.reward;
    discount *= cfg.gamma;
    record.steps.push_back(std::move(step));
    record.trajectory.push_back(Frame{sim.state(), sim.human_goals()});
  }
  record.outcome.kind = *sim.outcome();
  record.outcome.navigation_time = sim.state().time;
  return record;
}

}  // namespace crowdnav::env

namespace crowdnav::env {

Vec2 orca_robot_velocity(const JointState& s, const EnvConfig& cfg) {
  const orca::OrcaParams params{cfg.orca_time_horizon, cfg.orca_neighbor_dist, cfg.orca_max_neighbors, cfg.dt,
                                cfg.orca_safety_margin + cfg.robot_orca_safety_space};
  std::vector<orca::AgentView> neighbors;
  neighbors.reserve(s.humans.size());
  for (const HumanState& h : s.humans) neighbors.push_back({h.position, h.velocity, h.radius});
  const RobotState& r = s.robot;
  const orca::OrcaAgent self{r.position, r.velocity, r.radius, r.v_pref, r.goal};
  return orca::orca_velocity(self, neighbors, params);
}

RobotPolicy orca_policy(const EnvConfig& cfg) {
  return [cfg](const JointState& s) -> RobotCommand { return HolonomicVelocity{orca_robot_velocity(s, cfg)}; };
}

RobotPolicy discrete_orca_policy(const EnvConfig& cfg) {
  auto actions = std::make_shared<const ActionSet>(cfg.robot_v_pref, cfg.speed_spacing);
  return [cfg, actions](const JointState& s) -> RobotCommand {
    const Vec2 v = orca_robot_velocity(s, cfg);
    return (*actions)[actions->nearest(v, s.robot.heading)];
  };
}

RobotPolicy stop_policy() {
  return [](const JointState&) -> RobotCommand { return Action{0.0, 0.0}; };
}

RobotPolicy straight_policy(const EnvConfig& cfg) {
  auto actions = std::make_shared<const ActionSet>(cfg.robot_v_pref, cfg.speed_spacing);
  return [actions](const JointState& s) -> RobotCommand {
    const Vec2 to_goal = s.robot.goal - s.robot.position;
    // Speed takes effect along the current heading; steering sets the next one.
    const double goal_dir = std::atan2(to_goal.y, to_goal.x);
    double best_err = std::numeric_limits<double>::infinity();
    double steering = 0.0;
    for (std::size_t j = 0; j < ActionSet::kSteeringCount; ++j) {
      const double candidate = kTwoPi * static_cast<double>(j) / ActionSet::kSteeringCount;
      const double err = std::abs(wrap_signed_angle(s.robot.heading + candidate - goal_dir));
      if (err < best_err - 1e-12) {
        best_err = err;
        steering = candidate;
      }
    }
    return Action{actions->v_pref(), steering};
  };
}

}  // namespace crowdnav::env
