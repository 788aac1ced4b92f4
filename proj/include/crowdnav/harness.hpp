#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "crowdnav/config.hpp"
#include "crowdnav/env.hpp"

namespace crowdnav::harness {

namespace fs = std::filesystem;

struct MetricsRow {
  long episode = 0;
  double discounted_return = 0.0;
  double undiscounted_return = 0.0;
  env::OutcomeKind outcome = env::OutcomeKind::timeout;
  double navigation_time = 0.0;  // time at which the episode ended
  double schedule = 0.0;         // epsilon or dropout rate in effect
  double intrinsic_mean = 0.0;
};

struct MetricsFile {
  std::string config_hash;
  std::string label;  // "train" or "evaluate:<policy>"
  std::vector<MetricsRow> rows;
};

/// Header lines start with '#'; then a column-name row and one row per
/// episode.
void write_metrics_header(std::ostream& out, const std::string& config_hash, const std::string& label);
void write_metrics_row(std::ostream& out, const MetricsRow& row);
/// Throws std::runtime_error on a missing or malformed file.
MetricsFile read_metrics(const fs::path& path);

struct Summary {
  long episodes = 0;
  double average_return = 0.0;  // discounted
  double average_undiscounted_return = 0.0;
  double success_rate = 0.0;
  double collision_rate = 0.0;
  double timeout_rate = 0.0;
  double navigation_time = 0.0;  // mean over successes, NaN without any
};

Summary summarize(const std::vector<MetricsRow>& rows);
std::string format_summary_table(const std::vector<std::pair<std::string, Summary>>& entries);

/// y0 = x0, y_t = factor * y_{t-1} + (1 - factor) * x_t. factor in [0, 1).
std::vector<double> smooth(const std::vector<double>& series, double factor = 0.99);

struct TrainOptions {
  std::optional<fs::path> resume;  // checkpoint to continue from
  std::ostream* log = nullptr;     // progress lines
  long log_every = 100;
};

struct TrainResult {
  fs::path metrics_path;
  std::vector<fs::path> checkpoints;
  std::optional<fs::path> best_checkpoint;
  double best_validation_success = -1.0;
  std::vector<MetricsRow> rows;
  std::vector<std::uint8_t> re3_encoder;  // final frozen encoder weights (RE3 runs only)
};

TrainResult train(const RunConfig& rc, const TrainOptions& options = {});

struct CheckpointMeta {
  long episode = 0;
  std::string config_hash;
  double validation_success = -1.0;
  std::string config_text;
};

void write_checkpoint_meta(const fs::path& checkpoint, const CheckpointMeta& meta);
CheckpointMeta read_checkpoint_meta(const fs::path& checkpoint);

struct EvaluateOptions {
  std::optional<int> trajectory_episodes;  // write per-step pose rows for the first N episodes
  std::ostream* log = nullptr;
};

struct EvaluateResult {
  Summary summary;
  std::vector<MetricsRow> rows;
  fs::path metrics_path;
  std::optional<fs::path> trajectory_path;
};

bool is_builtin_policy(const std::string& name);

/// `target` is orca | stop | straight or a checkpoint path. Checkpoints are
/// rebuilt from their sidecar config when present, otherwise from `rc`.
EvaluateResult evaluate(const RunConfig& rc, const std::string& target, const EvaluateOptions& options = {});

/// Rolls out `policy` on the evaluation seed block of `rc`.
std::vector<env::EpisodeRecord> rollout(const env::RobotPolicy& policy, const RunConfig& rc, int episodes,
                                        SeedStream stream);

void write_trajectory_header(std::ostream& out);
void write_trajectory(std::ostream& out, long episode, const env::EpisodeRecord& record);

struct CompareResult {
  std::vector<std::pair<std::string, Summary>> summaries;
  long common_episodes = 0;
  fs::path curves_path;
  std::vector<std::string> warnings;
};

/// Smoothed per-episode curves (return, success, navigation time over
/// successes) for two or more metrics files.
CompareResult compare(const std::vector<fs::path>& metrics, const fs::path& out_dir, double factor = 0.99);

/// Per-episode navigation-time curve: successes feed the smoother, failures
/// carry the previous value forward. NaN before the first success.
std::vector<double> smoothed_navigation_time(const std::vector<MetricsRow>& rows, double factor);

}  // namespace crowdnav::harness
