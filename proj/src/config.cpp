#include "crowdnav/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace crowdnav {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(out)) {
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  }
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("config: " + key + " expects a nonnegative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: " + key + " expects true or false, got '" + v + "'");
}

std::vector<int> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const long long n = parse_int(key, trim(item));
    if (n <= 0 || n > 1 << 16) throw ConfigError("config: " + key + " sizes must be positive");
    out.push_back(static_cast<int>(n));
  }
  if (out.empty()) throw ConfigError("config: " + key + " needs at least one size");
  return out;
}

std::string fmt_sizes(const std::vector<int>& sizes) {
  std::string out;
  for (std::size_t i = 0; i < sizes.size(); ++i) out += (i ? "," : "") + std::to_string(sizes[i]);
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

template <class T>
T& strategy_as(RunConfig& rc, const std::string& key) {
  T* s = std::get_if<T>(&rc.strategy);
  if (s == nullptr) {
    throw ConfigError("config: " + key + " does not apply to strategy '" + explore::strategy_name(rc.strategy) + "'");
  }
  return *s;
}

// Strategy keys apply to whichever variant alternatives define them.
void set_strategy_key(RunConfig& rc, const std::string& key, const std::string& v) {
  using namespace explore;
  const std::string name = key.substr(std::string("strategy.").size());
  auto not_applicable = [&] {
    throw ConfigError("config: " + key + " does not apply to strategy '" + strategy_name(rc.strategy) + "'");
  };
  if (name == "epsilon_start") {
    strategy_as<EpsilonGreedy>(rc, key).start = parse_double(key, v);
  } else if (name == "epsilon_end") {
    strategy_as<EpsilonGreedy>(rc, key).end = parse_double(key, v);
  } else if (name == "decay_episodes") {
    const auto n = static_cast<int>(parse_int(key, v));
    if (auto* e = std::get_if<EpsilonGreedy>(&rc.strategy)) {
      e->decay_episodes = n;
    } else if (auto* d = std::get_if<DecayingDropout>(&rc.strategy)) {
      d->decay_episodes = n;
    } else {
      not_applicable();
    }
  } else if (name == "rate_start") {
    strategy_as<DecayingDropout>(rc, key).rate_start = parse_double(key, v);
  } else if (name == "rate_end") {
    strategy_as<DecayingDropout>(rc, key).rate_end = parse_double(key, v);
  } else if (name == "beta" || name == "epsilon") {
    const double x = parse_double(key, v);
    if (auto* c = std::get_if<IcmConfig>(&rc.strategy)) {
      (name == "beta" ? c->beta : c->epsilon) = x;
    } else if (auto* r = std::get_if<Re3Config>(&rc.strategy)) {
      (name == "beta" ? r->beta : r->epsilon) = x;
    } else {
      not_applicable();
    }
  } else if (name == "recompute") {
    const bool b = parse_bool(key, v);
    if (auto* c = std::get_if<IcmConfig>(&rc.strategy)) {
      c->recompute = b;
    } else if (auto* r = std::get_if<Re3Config>(&rc.strategy)) {
      r->recompute = b;
    } else {
      not_applicable();
    }
  } else if (name == "inverse_weight") {
    strategy_as<IcmConfig>(rc, key).inverse_weight = parse_double(key, v);
  } else if (name == "learning_rate") {
    strategy_as<IcmConfig>(rc, key).learning_rate = parse_double(key, v);
  } else if (name == "k") {
    strategy_as<Re3Config>(rc, key).k = static_cast<int>(parse_int(key, v));
  } else if (name == "store_capacity") {
    strategy_as<Re3Config>(rc, key).store_capacity = parse_u64(key, v);
  } else if (name == "average_knn") {
    strategy_as<Re3Config>(rc, key).average_knn = parse_bool(key, v);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto dbl = [&](const std::string& key, double env::EnvConfig::*field) {
      t[key] = [key, field](RunConfig& rc, const std::string& v) { rc.env.*field = parse_double(key, v); };
    };
    t["seed"] = [](RunConfig& rc, const std::string& v) { rc.seed = parse_u64("seed", v); };
    t["out"] = [](RunConfig& rc, const std::string& v) { rc.out = v; };
    t["env.scenario"] = [](RunConfig& rc, const std::string& v) {
      try {
        rc.kind = env::scenario_from_string(v);
      } catch (const std::exception&) {
        throw ConfigError("config: env.scenario must be circle or square, got '" + v + "'");
      }
    };
    dbl("env.dt", &env::EnvConfig::dt);
    dbl("env.time_limit", &env::EnvConfig::time_limit);
    t["env.num_humans"] = [](RunConfig& rc, const std::string& v) {
      rc.env.num_humans = static_cast<int>(parse_int("env.num_humans", v));
    };
    dbl("env.circle_radius", &env::EnvConfig::circle_radius);
    dbl("env.square_half_side", &env::EnvConfig::square_half_side);
    dbl("env.human_radius", &env::EnvConfig::human_radius);
    dbl("env.human_v_pref", &env::EnvConfig::human_v_pref);
    dbl("env.robot_radius", &env::EnvConfig::robot_radius);
    dbl("env.robot_v_pref", &env::EnvConfig::robot_v_pref);
    t["env.goal_tolerance"] = [](RunConfig& rc, const std::string& v) {
      if (v == "auto") {
        rc.env.goal_tolerance.reset();
      } else {
        rc.env.goal_tolerance = parse_double("env.goal_tolerance", v);
      }
    };
    dbl("env.gamma", &env::EnvConfig::gamma);
    t["env.speed_spacing"] = [](RunConfig& rc, const std::string& v) {
      if (v == "linear") {
        rc.env.speed_spacing = env::SpeedSpacing::linear;
      } else if (v == "exponential") {
        rc.env.speed_spacing = env::SpeedSpacing::exponential;
      } else {
        throw ConfigError("config: env.speed_spacing must be linear or exponential, got '" + v + "'");
      }
    };
    dbl("env.discomfort_dist", &env::EnvConfig::discomfort_dist);
    dbl("env.min_goal_jump", &env::EnvConfig::min_goal_jump);
    dbl("orca.time_horizon", &env::EnvConfig::orca_time_horizon);
    dbl("orca.neighbor_dist", &env::EnvConfig::orca_neighbor_dist);
    t["orca.max_neighbors"] = [](RunConfig& rc, const std::string& v) {
      rc.env.orca_max_neighbors = static_cast<int>(parse_int("orca.max_neighbors", v));
    };
    dbl("orca.safety_margin", &env::EnvConfig::orca_safety_margin);
    dbl("orca.robot_safety_space", &env::EnvConfig::robot_orca_safety_space);

    auto train_long = [&](const std::string& key, long TrainConfig::*field) {
      t[key] = [key, field](RunConfig& rc, const std::string& v) { rc.train.*field = static_cast<long>(parse_int(key, v)); };
    };
    auto train_int = [&](const std::string& key, int TrainConfig::*field) {
      t[key] = [key, field](RunConfig& rc, const std::string& v) { rc.train.*field = static_cast<int>(parse_int(key, v)); };
    };
    auto train_size = [&](const std::string& key, std::size_t TrainConfig::*field) {
      t[key] = [key, field](RunConfig& rc, const std::string& v) { rc.train.*field = parse_u64(key, v); };
    };
    train_long("train.episodes", &TrainConfig::episodes);
    train_size("train.warmup", &TrainConfig::warmup);
    train_size("train.batch_size", &TrainConfig::batch_size);
    train_long("train.target_interval", &TrainConfig::target_interval);
    t["train.learning_rate"] = [](RunConfig& rc, const std::string& v) {
      rc.train.learning_rate = parse_double("train.learning_rate", v);
    };
    train_int("train.n_step", &TrainConfig::n_step);
    train_int("train.train_steps", &TrainConfig::train_steps);
    train_size("train.buffer_capacity", &TrainConfig::buffer_capacity);
    train_long("train.validation_interval", &TrainConfig::validation_interval);
    train_int("train.validation_episodes", &TrainConfig::validation_episodes);
    train_long("train.checkpoint_interval", &TrainConfig::checkpoint_interval);
    train_int("train.il_episodes", &TrainConfig::il_episodes);
    train_int("train.il_epochs", &TrainConfig::il_epochs);

    t["net.encoder_hidden"] = [](RunConfig& rc, const std::string& v) {
      rc.net.encoder_hidden = parse_sizes("net.encoder_hidden", v);
    };
    t["net.value_hidden"] = [](RunConfig& rc, const std::string& v) {
      rc.net.value_hidden = parse_sizes("net.value_hidden", v);
    };
    t["net.advantage_hidden"] = [](RunConfig& rc, const std::string& v) {
      rc.net.advantage_hidden = parse_sizes("net.advantage_hidden", v);
    };
    t["eval.episodes"] = [](RunConfig& rc, const std::string& v) {
      rc.eval_episodes = static_cast<int>(parse_int("eval.episodes", v));
    };
    return t;
  }();
  return table;
}

explore::Strategy strategy_from_name(const std::string& name) {
  if (name == "epsilon") return explore::EpsilonGreedy{};
  if (name == "noisy") return explore::NoisyNets{};
  if (name == "dropout") return explore::DecayingDropout{};
  if (name == "icm") return explore::IcmConfig{};
  if (name == "re3") return explore::Re3Config{};
  throw ConfigError("config: strategy.kind must be one of epsilon, noisy, dropout, icm, re3; got '" + name + "'");
}

void validate(const RunConfig& rc) {
  try {
    rc.env.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const TrainConfig& t = rc.train;
  require(t.episodes > 0, "train.episodes must be positive");
  require(t.batch_size > 0, "train.batch_size must be positive");
  require(t.target_interval > 0, "train.target_interval must be positive");
  require(t.learning_rate > 0.0, "train.learning_rate must be positive");
  require(t.n_step >= 1, "train.n_step must be at least 1");
  require(t.train_steps >= 0, "train.train_steps must be nonnegative");
  require(t.buffer_capacity >= t.batch_size, "train.buffer_capacity must hold at least one batch");
  require(t.validation_interval > 0, "train.validation_interval must be positive");
  require(t.validation_episodes >= 0, "train.validation_episodes must be nonnegative");
  require(t.checkpoint_interval > 0, "train.checkpoint_interval must be positive");
  require(t.il_episodes >= 0 && t.il_epochs >= 0, "train.il_* must be nonnegative");
  require(rc.eval_episodes > 0, "eval.episodes must be positive");
  require(!rc.out.empty(), "out must not be empty");

  auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, explore::EpsilonGreedy>) {
          require(unit(s.start) && unit(s.end), "epsilon values must lie in [0, 1]");
          require(s.decay_episodes >= 0, "strategy.decay_episodes must be nonnegative");
        } else if constexpr (std::is_same_v<S, explore::DecayingDropout>) {
          require(unit(s.rate_start) && unit(s.rate_end) && s.rate_start < 1.0 && s.rate_end < 1.0,
                  "dropout rates must lie in [0, 1)");
          require(s.decay_episodes >= 0, "strategy.decay_episodes must be nonnegative");
        } else if constexpr (std::is_same_v<S, explore::IcmConfig>) {
          require(s.beta >= 0.0, "strategy.beta must be nonnegative");
          require(unit(s.inverse_weight), "strategy.inverse_weight must lie in [0, 1]");
          require(s.learning_rate > 0.0, "strategy.learning_rate must be positive");
          require(unit(s.epsilon), "strategy.epsilon must lie in [0, 1]");
        } else if constexpr (std::is_same_v<S, explore::Re3Config>) {
          require(s.beta >= 0.0, "strategy.beta must be nonnegative");
          require(s.k >= 1, "strategy.k must be at least 1");
          require(s.store_capacity >= 1, "strategy.store_capacity must be positive");
          require(unit(s.epsilon), "strategy.epsilon must lie in [0, 1]");
        }
      },
      rc.strategy);
}

}  // namespace

rl::QNetworkConfig RunConfig::q_network() const {
  rl::QNetworkConfig q = net;
  q.noisy = std::holds_alternative<explore::NoisyNets>(strategy);
  q.dropout = std::holds_alternative<explore::DecayingDropout>(strategy);
  if (q.dropout) q.dropout_rate = explore::dropout_rate_at(strategy, 0);
  return q;
}

KeyValues parse_config_text(const std::string& text, const std::string& source) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!out.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
  }
  return out;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

RunConfig resolve_config(const KeyValues& kv) {
  RunConfig rc;
  if (auto it = kv.find("strategy.kind"); it != kv.end()) rc.strategy = strategy_from_name(it->second);
  for (const auto& [key, value] : kv) {
    if (key == "strategy.kind") continue;
    if (key.rfind("strategy.", 0) == 0) {
      set_strategy_key(rc, key, value);
      continue;
    }
    const auto& table = setters();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second(rc, value);
  }
  validate(rc);
  return rc;
}

KeyValues to_key_values(const RunConfig& rc) {
  KeyValues kv;
  const env::EnvConfig& e = rc.env;
  kv["seed"] = std::to_string(rc.seed);
  kv["out"] = rc.out;
  kv["env.scenario"] = env::to_string(rc.kind);
  kv["env.dt"] = fmt_double(e.dt);
  kv["env.time_limit"] = fmt_double(e.time_limit);
  kv["env.num_humans"] = std::to_string(e.num_humans);
  kv["env.circle_radius"] = fmt_double(e.circle_radius);
  kv["env.square_half_side"] = fmt_double(e.square_half_side);
  kv["env.human_radius"] = fmt_double(e.human_radius);
  kv["env.human_v_pref"] = fmt_double(e.human_v_pref);
  kv["env.robot_radius"] = fmt_double(e.robot_radius);
  kv["env.robot_v_pref"] = fmt_double(e.robot_v_pref);
  kv["env.goal_tolerance"] = e.goal_tolerance ? fmt_double(*e.goal_tolerance) : "auto";
  kv["env.gamma"] = fmt_double(e.gamma);
  kv["env.speed_spacing"] = e.speed_spacing == env::SpeedSpacing::linear ? "linear" : "exponential";
  kv["env.discomfort_dist"] = fmt_double(e.discomfort_dist);
  kv["env.min_goal_jump"] = fmt_double(e.min_goal_jump);
  kv["orca.time_horizon"] = fmt_double(e.orca_time_horizon);
  kv["orca.neighbor_dist"] = fmt_double(e.orca_neighbor_dist);
  kv["orca.max_neighbors"] = std::to_string(e.orca_max_neighbors);
  kv["orca.safety_margin"] = fmt_double(e.orca_safety_margin);
  kv["orca.robot_safety_space"] = fmt_double(e.robot_orca_safety_space);

  const TrainConfig& t = rc.train;
  kv["train.episodes"] = std::to_string(t.episodes);
  kv["train.warmup"] = std::to_string(t.warmup);
  kv["train.batch_size"] = std::to_string(t.batch_size);
  kv["train.target_interval"] = std::to_string(t.target_interval);
  kv["train.learning_rate"] = fmt_double(t.learning_rate);
  kv["train.n_step"] = std::to_string(t.n_step);
  kv["train.train_steps"] = std::to_string(t.train_steps);
  kv["train.buffer_capacity"] = std::to_string(t.buffer_capacity);
  kv["train.validation_interval"] = std::to_string(t.validation_interval);
  kv["train.validation_episodes"] = std::to_string(t.validation_episodes);
  kv["train.checkpoint_interval"] = std::to_string(t.checkpoint_interval);
  kv["train.il_episodes"] = std::to_string(t.il_episodes);
  kv["train.il_epochs"] = std::to_string(t.il_epochs);

  kv["net.encoder_hidden"] = fmt_sizes(rc.net.encoder_hidden);
  kv["net.value_hidden"] = fmt_sizes(rc.net.value_hidden);
  kv["net.advantage_hidden"] = fmt_sizes(rc.net.advantage_hidden);
  kv["eval.episodes"] = std::to_string(rc.eval_episodes);

  kv["strategy.kind"] = explore::strategy_name(rc.strategy);
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, explore::EpsilonGreedy>) {
          kv["strategy.epsilon_start"] = fmt_double(s.start);
          kv["strategy.epsilon_end"] = fmt_double(s.end);
          kv["strategy.decay_episodes"] = std::to_string(s.decay_episodes);
        } else if constexpr (std::is_same_v<S, explore::DecayingDropout>) {
          kv["strategy.rate_start"] = fmt_double(s.rate_start);
          kv["strategy.rate_end"] = fmt_double(s.rate_end);
          kv["strategy.decay_episodes"] = std::to_string(s.decay_episodes);
        } else if constexpr (std::is_same_v<S, explore::IcmConfig>) {
          kv["strategy.beta"] = fmt_double(s.beta);
          kv["strategy.inverse_weight"] = fmt_double(s.inverse_weight);
          kv["strategy.learning_rate"] = fmt_double(s.learning_rate);
          kv["strategy.recompute"] = s.recompute ? "true" : "false";
          kv["strategy.epsilon"] = fmt_double(s.epsilon);
        } else if constexpr (std::is_same_v<S, explore::Re3Config>) {
          kv["strategy.beta"] = fmt_double(s.beta);
          kv["strategy.k"] = std::to_string(s.k);
          kv["strategy.store_capacity"] = std::to_string(s.store_capacity);
          kv["strategy.average_knn"] = s.average_knn ? "true" : "false";
          kv["strategy.recompute"] = s.recompute ? "true" : "false";
          kv["strategy.epsilon"] = fmt_double(s.epsilon);
        }
      },
      rc.strategy);
  return kv;
}

std::string to_config_text(const RunConfig& rc) {
  std::string out;
  for (const auto& [k, v] : to_key_values(rc)) out += k + " = " + v + "\n";
  return out;
}

std::string config_hash(const RunConfig& rc) {
  KeyValues kv = to_key_values(rc);
  kv.erase("out");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : kv) {
    for (const char c : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace crowdnav
