#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "crowdnav/vec2.hpp"

namespace crowdnav::plot {

struct Sample {
  double t = 0.0;
  Vec2 position;
  Vec2 velocity;
  double radius = 0.3;
  Vec2 goal;
};

/// One episode of a trajectory file. agents[0] is the robot.
struct Trajectory {
  long episode = 0;
  std::vector<std::vector<Sample>> agents;
  double final_time() const;
};

/// Reads the rows of one episode (the first one when `episode` is empty).
/// Throws std::runtime_error when the file or the episode is missing.
Trajectory read_trajectory(const std::filesystem::path& path, std::optional<long> episode = std::nullopt);

/// 5, 10, ... below the final time, then the final time itself.
std::vector<double> time_labels(double final_time, double every = 5.0);

/// Shortest decimal form with at most two fractional digits ("12.3", "5").
std::string format_time(double t);

std::string render_svg(const Trajectory& trajectory);

void plot_file(const std::filesystem::path& trajectory_csv, const std::filesystem::path& svg_out,
               std::optional<long> episode = std::nullopt);

}  // namespace crowdnav::plot
