#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "crowdnav/agent.hpp"
#include "crowdnav/env.hpp"
#include "crowdnav/exploration.hpp"

namespace crowdnav {

/// Unknown keys, malformed values, or an inconsistent configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  long episodes = 10000;
  std::size_t warmup = 2000;           // transitions before the first update
  std::size_t batch_size = 128;
  long target_interval = 50;           // episodes between hard target syncs
  double learning_rate = 1e-3;
  int n_step = 1;
  int train_steps = 1;                 // updates per environment step
  std::size_t buffer_capacity = 100000;
  long validation_interval = 500;
  int validation_episodes = 100;
  long checkpoint_interval = 1000;
  int il_episodes = 0;                 // 0 disables imitation pretraining
  int il_epochs = 50;
};

struct RunConfig {
  env::ScenarioKind kind = env::ScenarioKind::circle;
  env::EnvConfig env;
  explore::Strategy strategy = explore::EpsilonGreedy{};
  TrainConfig train;
  rl::QNetworkConfig net;
  int eval_episodes = 1000;
  std::string out = "runs/default";
  std::uint64_t seed = 0;

  /// Q-network options with the noisy/dropout flags implied by the strategy.
  rl::QNetworkConfig q_network() const;
};

using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines. '#' starts a comment; blank lines are skipped.
/// Duplicate keys are an error.
KeyValues parse_config_text(const std::string& text, const std::string& source = "<text>");
KeyValues read_config_file(const std::filesystem::path& path);

/// Builds and validates a RunConfig from defaults overlaid with `kv`.
RunConfig resolve_config(const KeyValues& kv);

/// Every effective key with a canonical value, including defaults.
KeyValues to_key_values(const RunConfig& rc);
std::string to_config_text(const RunConfig& rc);

/// 16 hex digits of FNV-1a over the canonical text, excluding the output
/// directory.
std::string config_hash(const RunConfig& rc);

}  // namespace crowdnav
