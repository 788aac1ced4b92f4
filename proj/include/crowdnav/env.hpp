#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "crowdnav/random.hpp"
#include "crowdnav/vec2.hpp"

namespace crowdnav::env {

struct RobotState {
  Vec2 position;
  Vec2 velocity;
  double radius = 0.3;
  double v_pref = 1.0;
  double heading = 0.0;  // [0, 2*pi)
  Vec2 goal;
};

struct HumanState {
  Vec2 position;
  Vec2 velocity;
  double radius = 0.3;
};

struct JointState {
  RobotState robot;
  std::vector<HumanState> humans;
  double time = 0.0;
};

/// Unicycle command: speed along the current heading and a heading increment
/// that takes effect on the following step.
struct Action {
  double speed = 0.0;
  double steering = 0.0;

  bool operator==(const Action&) const = default;
};

enum class SpeedSpacing { linear, exponential };

class ActionSet {
 public:
  static constexpr std::size_t kSteeringCount = 16;
  static constexpr std::size_t kSpeedCount = 5;
  static constexpr std::size_t kSize = kSteeringCount * kSpeedCount + 1;

  ActionSet(double v_pref, SpeedSpacing spacing = SpeedSpacing::linear);

  std::size_t size() const { return actions_.size(); }
  const Action& operator[](std::size_t i) const { return actions_.at(i); }
  std::span<const Action> actions() const { return actions_; }
  double v_pref() const { return v_pref_; }

  /// Index of an action that is exactly a member of the set.
  std::optional<std::size_t> index_of(const Action& a) const;

  /// Velocity the action commands for a robot whose heading is `heading`
  /// after the steering has been applied.
  static Vec2 commanded_velocity(const Action& a, double heading);

  /// The member whose commanded velocity is closest (Euclidean) to `velocity`.
  std::size_t nearest(const Vec2& velocity, double heading) const;

 private:
  double v_pref_;
  std::vector<Action> actions_;
};

/// Stop action first, then speed-major / steering-minor.
ActionSet build_action_space(double v_pref, SpeedSpacing spacing = SpeedSpacing::linear);

enum class OutcomeKind { success, collision, timeout };

std::string to_string(OutcomeKind kind);
OutcomeKind outcome_from_string(const std::string& s);

struct EpisodeOutcome {
  OutcomeKind kind = OutcomeKind::timeout;
  double navigation_time = 0.0;
  double discounted_return = 0.0;
  double undiscounted_return = 0.0;
};

enum class ScenarioKind { circle, square };

std::string to_string(ScenarioKind kind);
ScenarioKind scenario_from_string(const std::string& s);

struct EnvConfig {
  double dt = 0.25;
  double time_limit = 25.0;
  int num_humans = 10;
  double circle_radius = 4.0;
  double square_half_side = 5.0;
  double human_radius = 0.3;
  double human_v_pref = 1.0;
  double robot_radius = 0.3;
  double robot_v_pref = 1.0;
  std::optional<double> goal_tolerance;  // defaults to robot_radius
  double gamma = 0.9;
  SpeedSpacing speed_spacing = SpeedSpacing::linear;
  double discomfort_dist = 0.2;  // spawn clearance
  double min_goal_jump = 2.0;    // human goal reassignment distance
  double orca_time_horizon = 5.0;
  double orca_neighbor_dist = 10.0;
  int orca_max_neighbors = 10;
  double orca_safety_margin = 0.01;
  double robot_orca_safety_space = 0.15;  // extra padding for the ORCA baseline robot only

  double goal_radius() const { return goal_tolerance.value_or(robot_radius); }
  int max_steps() const;
  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

/// Thrown when a policy returns a command the environment cannot execute.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

RobotState step_kinematics(const RobotState& robot, const Action& a, double dt);

double distance_to_goal(const RobotState& robot);

/// Surface-to-surface distance between the robot and one human.
double clearance(const RobotState& robot, const HumanState& human);

double compute_reward(const JointState& s, const JointState& s_next, std::optional<OutcomeKind> outcome);

std::optional<OutcomeKind> detect_outcome(const JointState& s, const EnvConfig& cfg);

struct Scenario {
  JointState state;
  std::vector<Vec2> human_goals;
  std::vector<double> human_v_pref;
};

Scenario generate_scenario(ScenarioKind kind, const EnvConfig& cfg, std::uint64_t seed);

/// Robot-centric features; length 6 + 7N.
std::vector<float> encode_state(const JointState& s);
constexpr std::size_t feature_size(std::size_t num_humans) { return 6 + 7 * num_humans; }

/// Velocity command used by the training-free baselines; not part of the
/// learned action space.
struct HolonomicVelocity {
  Vec2 velocity;
};

using RobotCommand = std::variant<Action, HolonomicVelocity>;
using RobotPolicy = std::function<RobotCommand(const JointState&)>;

struct StepRecord {
  JointState state;
  std::size_t action_index = 0;  // nearest member for holonomic commands
  RobotCommand command;
  double reward = 0.0;
  JointState next_state;
  bool terminal = false;
};

struct Frame {
  JointState state;
  std::vector<Vec2> human_goals;
};

struct EpisodeRecord {
  std::vector<StepRecord> steps;
  EpisodeOutcome outcome;
  std::vector<Frame> trajectory;  // initial frame plus one per step
};

/// Stepping simulator. Humans run ORCA among themselves and ignore the robot.
class CrowdSim {
 public:
  CrowdSim(EnvConfig cfg, ScenarioKind kind, std::uint64_t seed);

  const JointState& state() const { return state_; }
  const std::vector<Vec2>& human_goals() const { return goals_; }
  const ActionSet& action_set() const { return actions_; }
  const EnvConfig& config() const { return cfg_; }
  bool done() const { return outcome_.has_value(); }
  std::optional<OutcomeKind> outcome() const { return outcome_; }

  StepRecord step(const RobotCommand& command);

  /// ORCA velocities for every human from the current snapshot.
  std::vector<Vec2> human_velocities() const;

 private:
  EnvConfig cfg_;
  ActionSet actions_;
  JointState state_;
  std::vector<Vec2> goals_;
  std::vector<double> human_v_pref_;
  Rng goal_rng_;
  int step_count_ = 0;
  std::optional<OutcomeKind> outcome_;
};

// Training-free baseline policies.

/// Full-responsibility ORCA toward the goal, treating every human as a
/// reciprocating neighbor.
Vec2 orca_robot_velocity(const JointState& s, const EnvConfig& cfg);
RobotPolicy orca_policy(const EnvConfig& cfg);
/// ORCA velocity snapped to the nearest member of the action set.
RobotPolicy discrete_orca_policy(const EnvConfig& cfg);
RobotPolicy stop_policy();
/// Full speed with the steering that best points the next heading at the goal.
RobotPolicy straight_policy(const EnvConfig& cfg);

EpisodeRecord run_episode(const RobotPolicy& policy, ScenarioKind kind, const EnvConfig& cfg, std::uint64_t seed);

}  // namespace crowdnav::env
