#include "crowdnav/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "crowdnav/agent.hpp"
#include "crowdnav/exploration.hpp"

namespace crowdnav::harness {

namespace {

constexpr const char* kMetricsColumns =
    "episode,return,undiscounted_return,outcome,navigation_time,schedule,intrinsic_mean";

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(line);
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double to_double(const std::string& s, const std::string& where) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": bad number '" + s + "'");
  }
}

std::vector<std::uint8_t> read_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_binary(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

rl::Mat gather(std::size_t dim, const std::vector<const std::vector<float>*>& cols) {
  rl::Mat m(static_cast<nn::Index>(dim), static_cast<nn::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    std::copy(cols[j]->begin(), cols[j]->end(), m.col(static_cast<nn::Index>(j)).data());
  }
  return m;
}

env::RobotPolicy greedy_policy(std::shared_ptr<rl::QNetwork> net, std::shared_ptr<const env::ActionSet> actions) {
  return [net, actions](const env::JointState& s) -> env::RobotCommand {
    const std::vector<float> q = net->q_values(env::encode_state(s));
    return (*actions)[rl::greedy_action(q)];
  };
}

MetricsRow row_from(long episode, const env::EpisodeOutcome& o, double schedule, double intrinsic_mean,
                    double end_time) {
  MetricsRow r;
  r.episode = episode;
  r.discounted_return = o.discounted_return;
  r.undiscounted_return = o.undiscounted_return;
  r.outcome = o.kind;
  r.navigation_time = end_time;
  r.schedule = schedule;
  r.intrinsic_mean = intrinsic_mean;
  return r;
}

fs::path checkpoint_name(const fs::path& dir, long episode) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "checkpoint_%06ld.cnnw", episode);
  return dir / buf;
}

fs::path meta_path(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".meta"); }

}  // namespace

// ---------------------------------------------------------------------------
// Metrics files

void write_metrics_header(std::ostream& out, const std::string& config_hash, const std::string& label) {
  out << "# crowdnav metrics\n";
  out << "# config_hash = " << config_hash << "\n";
  out << "# run = " << label << "\n";
  out << kMetricsColumns << "\n";
}

void write_metrics_row(std::ostream& out, const MetricsRow& row) {
  out << row.episode << ',' << num(row.discounted_return) << ',' << num(row.undiscounted_return) << ','
      << env::to_string(row.outcome) << ',' << num(row.navigation_time) << ',' << num(row.schedule) << ','
      << num(row.intrinsic_mean) << '\n';
}

MetricsFile read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path.string());
  MetricsFile file;
  std::string line;
  bool columns_seen = false;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(' '));
      key.erase(key.find_last_not_of(' ') + 1);
      std::string value = line.substr(eq + 1);
      value.erase(0, value.find_first_not_of(' '));
      if (key == "config_hash") file.config_hash = value;
      if (key == "run") file.label = value;
      continue;
    }
    if (!columns_seen) {
      if (line != kMetricsColumns) throw std::runtime_error(where + ": unexpected column header");
      columns_seen = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 7) throw std::runtime_error(where + ": expected 7 fields");
    MetricsRow r;
    r.episode = static_cast<long>(to_double(f[0], where));
    r.discounted_return = to_double(f[1], where);
    r.undiscounted_return = to_double(f[2], where);
    try {
      r.outcome = env::outcome_from_string(f[3]);
    } catch (const std::exception&) {
      throw std::runtime_error(where + ": bad outcome '" + f[3] + "'");
    }
    r.navigation_time = to_double(f[4], where);
    r.schedule = to_double(f[5], where);
    r.intrinsic_mean = to_double(f[6], where);
    file.rows.push_back(r);
  }
  if (!columns_seen) throw std::runtime_error(path.string() + ": not a metrics file");
  return file;
}

Summary summarize(const std::vector<MetricsRow>& rows) {
  Summary s;
  s.episodes = static_cast<long>(rows.size());
  s.navigation_time = std::numeric_limits<double>::quiet_NaN();
  if (rows.empty()) return s;
  long success = 0;
  long collision = 0;
  long timeout = 0;
  double time_sum = 0.0;
  for (const MetricsRow& r : rows) {
    s.average_return += r.discounted_return;
    s.average_undiscounted_return += r.undiscounted_return;
    switch (r.outcome) {
      case env::OutcomeKind::success:
        ++success;
        time_sum += r.navigation_time;
        break;
      case env::OutcomeKind::collision:
        ++collision;
        break;
      case env::OutcomeKind::timeout:
        ++timeout;
        break;
    }
  }
  const auto n = static_cast<double>(rows.size());
  s.average_return /= n;
  s.average_undiscounted_return /= n;
  s.success_rate = static_cast<double>(success) / n;
  // The last nonzero rate is a complement so that
  // (success + collision) + timeout == 1 holds in floating point too.
  if (timeout == 0) {
    s.collision_rate = collision == 0 ? 0.0 : 1.0 - s.success_rate;
  } else {
    s.collision_rate = static_cast<double>(collision) / n;
    s.timeout_rate = 1.0 - (s.success_rate + s.collision_rate);
  }
  if (success > 0) s.navigation_time = time_sum / static_cast<double>(success);
  return s;
}

std::string format_summary_table(const std::vector<std::pair<std::string, Summary>>& entries) {
  std::ostringstream out;
  std::size_t width = 6;
  for (const auto& e : entries) width = std::max(width, e.first.size());
  out << std::left << std::setw(static_cast<int>(width)) << "policy" << std::right << std::setw(10) << "episodes"
      << std::setw(10) << "return" << std::setw(12) << "undisc_ret" << std::setw(10) << "success" << std::setw(11)
      << "collision" << std::setw(10) << "timeout" << std::setw(10) << "nav_time" << "\n";
  out << std::fixed;
  for (const auto& [name, s] : entries) {
    out << std::left << std::setw(static_cast<int>(width)) << name << std::right << std::setw(10) << s.episodes
        << std::setprecision(4) << std::setw(10) << s.average_return << std::setw(12) << s.average_undiscounted_return
        << std::setprecision(3) << std::setw(10) << s.success_rate << std::setw(11) << s.collision_rate
        << std::setw(10) << s.timeout_rate;
    if (std::isnan(s.navigation_time)) {
      out << std::setw(10) << "-";
    } else {
      out << std::setw(10) << s.navigation_time;
    }
    out << "\n";
  }
  return out.str();
}

std::vector<double> smooth(const std::vector<double>& series, double factor) {
  if (!(factor >= 0.0 && factor < 1.0)) throw std::invalid_argument("smooth: factor must lie in [0, 1)");
  std::vector<double> out;
  out.reserve(series.size());
  for (std::size_t t = 0; t < series.size(); ++t) {
    out.push_back(t == 0 ? series[0] : factor * out.back() + (1.0 - factor) * series[t]);
  }
  return out;
}

std::vector<double> smoothed_navigation_time(const std::vector<MetricsRow>& rows, double factor) {
  if (!(factor >= 0.0 && factor < 1.0)) throw std::invalid_argument("smooth: factor must lie in [0, 1)");
  std::vector<double> out;
  out.reserve(rows.size());
  double y = std::numeric_limits<double>::quiet_NaN();
  for (const MetricsRow& r : rows) {
    if (r.outcome == env::OutcomeKind::success) {
      y = std::isnan(y) ? r.navigation_time : factor * y + (1.0 - factor) * r.navigation_time;
    }
    out.push_back(y);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_checkpoint_meta(const fs::path& checkpoint, const CheckpointMeta& meta) {
  std::ofstream out(meta_path(checkpoint), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + meta_path(checkpoint).string());
  out << "episode = " << meta.episode << "\n";
  out << "config_hash = " << meta.config_hash << "\n";
  out << "validation_success = " << num(meta.validation_success) << "\n";
  std::istringstream cfg(meta.config_text);
  std::string line;
  while (std::getline(cfg, line)) {
    if (!line.empty()) out << "config." << line << "\n";
  }
}

CheckpointMeta read_checkpoint_meta(const fs::path& checkpoint) {
  const fs::path path = meta_path(checkpoint);
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const KeyValues kv = parse_config_text(ss.str(), path.string());
  CheckpointMeta meta;
  for (const auto& [k, v] : kv) {
    if (k == "episode") {
      meta.episode = static_cast<long>(to_double(v, path.string()));
    } else if (k == "config_hash") {
      meta.config_hash = v;
    } else if (k == "validation_success") {
      meta.validation_success = to_double(v, path.string());
    } else if (k.rfind("config.", 0) == 0) {
      meta.config_text += k.substr(7) + " = " + v + "\n";
    }
  }
  return meta;
}

// ---------------------------------------------------------------------------
// Rollouts

std::vector<env::EpisodeRecord> rollout(const env::RobotPolicy& policy, const RunConfig& rc, int episodes,
                                        SeedStream stream) {
  std::vector<env::EpisodeRecord> out;
  out.reserve(static_cast<std::size_t>(std::max(episodes, 0)));
  for (int i = 0; i < episodes; ++i) {
    out.push_back(env::run_episode(policy, rc.kind, rc.env, derive_seed(rc.seed, stream, static_cast<std::uint64_t>(i))));
  }
  return out;
}

void write_trajectory_header(std::ostream& out) { out << "episode,t,agent,x,y,vx,vy,radius,goal_x,goal_y\n"; }

void write_trajectory(std::ostream& out, long episode, const env::EpisodeRecord& record) {
  for (const env::Frame& f : record.trajectory) {
    const env::RobotState& r = f.state.robot;
    const std::string t = num(f.state.time);
    out << episode << ',' << t << ",0," << num(r.position.x) << ',' << num(r.position.y) << ',' << num(r.velocity.x)
        << ',' << num(r.velocity.y) << ',' << num(r.radius) << ',' << num(r.goal.x) << ',' << num(r.goal.y) << '\n';
    for (std::size_t i = 0; i < f.state.humans.size(); ++i) {
      const env::HumanState& h = f.state.humans[i];
      const Vec2 g = i < f.human_goals.size() ? f.human_goals[i] : Vec2{};
      out << episode << ',' << t << ',' << i + 1 << ',' << num(h.position.x) << ',' << num(h.position.y) << ','
          << num(h.velocity.x) << ',' << num(h.velocity.y) << ',' << num(h.radius) << ',' << num(g.x) << ','
          << num(g.y) << '\n';
    }
  }
}

bool is_builtin_policy(const std::string& name) { return name == "orca" || name == "stop" || name == "straight"; }

EvaluateResult evaluate(const RunConfig& rc, const std::string& target, const EvaluateOptions& options) {
  env::RobotPolicy policy;
  std::string label = target;
  if (target == "orca") {
    policy = env::orca_policy(rc.env);
  } else if (target == "stop") {
    policy = env::stop_policy();
  } else if (target == "straight") {
    policy = env::straight_policy(rc.env);
  } else {
    const fs::path ckpt(target);
    if (!fs::exists(ckpt)) throw std::runtime_error("checkpoint not found: " + target);
    RunConfig arch = rc;
    if (fs::exists(meta_path(ckpt))) {
      const CheckpointMeta meta = read_checkpoint_meta(ckpt);
      KeyValues kv = parse_config_text(meta.config_text, meta_path(ckpt).string());
      arch = resolve_config(kv);
    }
    if (arch.env.num_humans != rc.env.num_humans) {
      throw nn::CheckpointError("checkpoint was trained with " + std::to_string(arch.env.num_humans) +
                                " humans; evaluation uses " + std::to_string(rc.env.num_humans));
    }
    Rng init(0);
    auto net = std::make_shared<rl::QNetwork>(env::feature_size(static_cast<std::size_t>(rc.env.num_humans)),
                                              env::ActionSet::kSize, arch.q_network(), init);
    net->load(read_binary(ckpt));
    policy = greedy_policy(net, std::make_shared<const env::ActionSet>(rc.env.robot_v_pref, rc.env.speed_spacing));
    label = ckpt.stem().string();
  }

  const fs::path dir(rc.out);
  fs::create_directories(dir);
  const std::string stem = "eval_" + label + "_" + env::to_string(rc.kind);
  EvaluateResult result;
  result.metrics_path = dir / (stem + ".csv");
  std::ofstream metrics(result.metrics_path, std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + result.metrics_path.string());
  write_metrics_header(metrics, config_hash(rc), "evaluate:" + label);

  std::ofstream traj;
  const int traj_episodes = options.trajectory_episodes.value_or(0);
  if (traj_episodes > 0) {
    result.trajectory_path = dir / ("trajectories_" + label + "_" + env::to_string(rc.kind) + ".csv");
    traj.open(*result.trajectory_path, std::ios::trunc);
    if (!traj) throw std::runtime_error("cannot write " + result.trajectory_path->string());
    write_trajectory_header(traj);
  }

  for (int i = 0; i < rc.eval_episodes; ++i) {
    const env::EpisodeRecord rec = env::run_episode(
        policy, rc.kind, rc.env, derive_seed(rc.seed, SeedStream::evaluation, static_cast<std::uint64_t>(i)));
    const double end_time = rec.trajectory.empty() ? 0.0 : rec.trajectory.back().state.time;
    const MetricsRow row = row_from(i, rec.outcome, 0.0, 0.0, end_time);
    write_metrics_row(metrics, row);
    result.rows.push_back(row);
    if (i < traj_episodes) write_trajectory(traj, i, rec);
  }
  result.summary = summarize(result.rows);

  std::ofstream summary(dir / (stem + ".txt"), std::ios::trunc);
  summary << format_summary_table({{label, result.summary}});
  if (options.log != nullptr) *options.log << format_summary_table({{label, result.summary}});
  return result;
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(const RunConfig& rc, const TrainOptions& options) {
  const fs::path dir(rc.out);
  fs::create_directories(dir);
  const std::string hash = config_hash(rc);
  const std::string config_text = to_config_text(rc);
  const explore::Strategy& strategy = rc.strategy;
  const bool noisy = std::holds_alternative<explore::NoisyNets>(strategy);
  const bool dropout = std::holds_alternative<explore::DecayingDropout>(strategy);
  const double gamma = rc.env.gamma;
  const TrainConfig& tc = rc.train;

  const std::size_t feature_dim = env::feature_size(static_cast<std::size_t>(rc.env.num_humans));
  const std::size_t num_actions = env::ActionSet::kSize;
  const env::ActionSet actions(rc.env.robot_v_pref, rc.env.speed_spacing);

  Rng init(derive_seed(rc.seed, SeedStream::network_init));
  rl::QNetwork online(feature_dim, num_actions, rc.q_network(), init);
  rl::QNetwork target = online;

  std::optional<explore::IcmModule> icm;
  std::optional<explore::Re3Module> re3;
  if (const auto* c = std::get_if<explore::IcmConfig>(&strategy)) {
    Rng r(derive_seed(rc.seed, SeedStream::icm_init));
    icm.emplace(feature_dim, num_actions, r, c->learning_rate, c->inverse_weight);
  } else if (const auto* c = std::get_if<explore::Re3Config>(&strategy)) {
    Rng r(derive_seed(rc.seed, SeedStream::re3_init));
    re3.emplace(feature_dim, r, c->k, c->store_capacity, c->average_knn);
  }
  const bool recompute = [&] {
    if (const auto* c = std::get_if<explore::IcmConfig>(&strategy)) return c->recompute;
    if (const auto* c = std::get_if<explore::Re3Config>(&strategy)) return c->recompute;
    return false;
  }();

  long start = 0;
  double best_validation = -1.0;
  if (options.resume) {
    const CheckpointMeta meta = read_checkpoint_meta(*options.resume);
    online.load(read_binary(*options.resume));
    target.copy_from(online);
    start = meta.episode;
    if (start >= tc.episodes) throw std::runtime_error("checkpoint is already at or past train.episodes");
  } else if (tc.il_episodes > 0) {
    const auto demos = rl::collect_demonstrations(rc.env, rc.kind, tc.il_episodes, rc.seed);
    rl::il_pretrain(demos, online, tc.il_epochs, tc.learning_rate, tc.batch_size,
                    derive_seed(rc.seed, SeedStream::demonstrations, 1u << 20));
    target.copy_from(online);
  }

  TrainResult result;
  result.metrics_path = dir / "metrics.csv";
  std::ofstream metrics;
  if (options.resume && fs::exists(result.metrics_path)) {
    metrics.open(result.metrics_path, std::ios::app);
  } else {
    metrics.open(result.metrics_path, std::ios::trunc);
    write_metrics_header(metrics, hash, "train:" + explore::strategy_name(strategy));
  }
  if (!metrics) throw std::runtime_error("cannot write " + result.metrics_path.string());

  std::ofstream validation_log(dir / "validation.csv", options.resume ? std::ios::app : std::ios::trunc);
  if (!options.resume) validation_log << "episode,success_rate,collision_rate,timeout_rate,navigation_time,return\n";

  rl::ReplayBuffer buffer(tc.buffer_capacity, derive_seed(rc.seed, SeedStream::replay_sampler));
  nn::Adam<float> adam(tc.learning_rate);
  rl::TargetSync sync(tc.target_interval);
  const std::size_t ready = std::max(tc.warmup, tc.batch_size);

  auto save_checkpoint = [&](const fs::path& path, long episode, double validation) {
    write_binary(path, online.save());
    write_checkpoint_meta(path, CheckpointMeta{episode, hash, validation, config_text});
  };

  auto batch_columns = [&](std::span<const std::size_t> idx, bool next) {
    std::vector<const std::vector<float>*> cols;
    cols.reserve(idx.size());
    for (std::size_t i : idx) cols.push_back(next ? &buffer.at(i).next_state : &buffer.at(i).state);
    return gather(feature_dim, cols);
  };

  // Learning reward r = r_ex + beta * r_in; r_in is either the value frozen at
  // collection time or a fresh estimate.
  std::function<std::vector<double>(std::span<const std::size_t>)> learning_rewards;
  if (icm || re3) {
    learning_rewards = [&](std::span<const std::size_t> idx) {
      std::vector<double> r_in;
      if (recompute && re3) {
        r_in = re3->query_batch(batch_columns(idx, true));
      } else if (recompute && icm) {
        std::vector<std::size_t> acts;
        for (std::size_t i : idx) acts.push_back(buffer.at(i).action);
        r_in = icm->intrinsic_batch(batch_columns(idx, false), acts, batch_columns(idx, true));
      } else {
        for (std::size_t i : idx) r_in.push_back(buffer.at(i).intrinsic);
      }
      std::vector<double> r;
      r.reserve(idx.size());
      for (std::size_t j = 0; j < idx.size(); ++j) {
        r.push_back(explore::augment_reward(strategy, buffer.at(idx[j]).reward, r_in[j]));
      }
      return r;
    };
  }

  auto learn = [&](Rng& rng, int steps) {
    for (int s = 0; s < steps * tc.train_steps; ++s) {
      if (buffer.size() < ready) return;
      rl::TrainStepOptions o;
      o.online = explore::training_options(strategy, rng);
      if (noisy) {
        o.bootstrap.noise = nn::NoiseMode::sampled;
        o.bootstrap.rng = &rng;
      }
      o.rewards = learning_rewards;
      const auto res = rl::train_step(buffer, online, target, adam, tc.batch_size, gamma, o);
      if (res && icm) {
        std::vector<std::size_t> acts;
        for (std::size_t i : res->indices) acts.push_back(buffer.at(i).action);
        icm->update(batch_columns(res->indices, false), acts, batch_columns(res->indices, true));
      }
    }
  };

  auto greedy = greedy_policy(std::shared_ptr<rl::QNetwork>(&online, [](rl::QNetwork*) {}),
                              std::make_shared<const env::ActionSet>(actions));

  for (long ep = start; ep < tc.episodes; ++ep) {
    Rng rng(derive_seed(rc.seed, SeedStream::exploration, static_cast<std::uint64_t>(ep)));
    double schedule = explore::epsilon_at(strategy, ep);
    if (dropout) {
      schedule = explore::dropout_rate_at(strategy, ep);
      online.set_dropout_rate(schedule);
      target.set_dropout_rate(schedule);
    }

    env::CrowdSim sim(rc.env, rc.kind, derive_seed(rc.seed, SeedStream::training, static_cast<std::uint64_t>(ep)));
    auto raw = std::make_shared<const env::JointState>(sim.state());
    std::vector<float> features = env::encode_state(*raw);
    std::vector<rl::Transition> pending;
    env::EpisodeOutcome outcome;
    double discount = 1.0;
    double intrinsic_sum = 0.0;
    long steps = 0;

    while (!sim.done()) {
      const std::vector<float> q = online.q_values(features, explore::acting_options(strategy, rng));
      const std::size_t a = explore::select_action(strategy, q, ep, rng);
      const env::StepRecord rec = sim.step(actions[a]);
      auto raw_next = std::make_shared<const env::JointState>(rec.next_state);
      std::vector<float> next_features = env::encode_state(*raw_next);

      double r_in = 0.0;
      if (icm) {
        r_in = icm->intrinsic(features, a, next_features);
      } else if (re3) {
        r_in = re3->intrinsic(next_features);
      }
      intrinsic_sum += r_in;
      outcome.discounted_return += discount * rec.reward;
      outcome.undiscounted_return += rec.reward;
      discount *= gamma;
      ++steps;

      rl::Transition t{features, a, rec.reward, r_in, next_features, rec.terminal, 1, raw, raw_next};
      if (tc.n_step == 1) {
        buffer.push(std::move(t));
        learn(rng, 1);
      } else {
        pending.push_back(std::move(t));
      }
      features = std::move(next_features);
      raw = std::move(raw_next);
    }
    if (tc.n_step > 1) {
      for (rl::Transition& t : rl::to_n_step(pending, tc.n_step, gamma)) buffer.push(std::move(t));
      learn(rng, static_cast<int>(pending.size()));
    }

    outcome.kind = *sim.outcome();
    outcome.navigation_time = sim.state().time;
    const MetricsRow row = row_from(ep, outcome, schedule, steps > 0 ? intrinsic_sum / static_cast<double>(steps) : 0.0,
                                    sim.state().time);
    write_metrics_row(metrics, row);
    metrics.flush();
    result.rows.push_back(row);
    sync.tick(online, target);

    const long done = ep + 1;
    double validation = -1.0;
    if (done % tc.validation_interval == 0 && tc.validation_episodes > 0) {
      std::vector<MetricsRow> vrows;
      for (const auto& rec : rollout(greedy, rc, tc.validation_episodes, SeedStream::validation)) {
        vrows.push_back(row_from(0, rec.outcome, 0.0, 0.0, rec.trajectory.back().state.time));
      }
      const Summary vs = summarize(vrows);
      validation = vs.success_rate;
      validation_log << done << ',' << num(vs.success_rate) << ',' << num(vs.collision_rate) << ','
                     << num(vs.timeout_rate) << ',' << num(vs.navigation_time) << ',' << num(vs.average_return) << '\n';
      validation_log.flush();
      if (validation > best_validation) {
        best_validation = validation;
        result.best_checkpoint = dir / "best.cnnw";
        save_checkpoint(*result.best_checkpoint, done, validation);
      }
    }
    if (done % tc.checkpoint_interval == 0 || done == tc.episodes) {
      const fs::path path = checkpoint_name(dir, done);
      save_checkpoint(path, done, validation);
      result.checkpoints.push_back(path);
    }
    if (options.log != nullptr && options.log_every > 0 && (done % options.log_every == 0 || done == tc.episodes)) {
      const std::size_t from = result.rows.size() > static_cast<std::size_t>(options.log_every)
                                    ? result.rows.size() - static_cast<std::size_t>(options.log_every)
                                    : 0;
      const Summary recent = summarize({result.rows.begin() + static_cast<std::ptrdiff_t>(from), result.rows.end()});
      *options.log << "episode " << done << "/" << tc.episodes << "  success " << num(recent.success_rate)
                   << "  collision " << num(recent.collision_rate) << "  return " << num(recent.average_return)
                   << "  buffer " << buffer.size() << "\n";
      options.log->flush();
    }
  }
  result.best_validation_success = best_validation;
  if (re3) result.re3_encoder = re3->encoder_blob();
  return result;
}

// ---------------------------------------------------------------------------
// Comparison

CompareResult compare(const std::vector<fs::path>& metrics, const fs::path& out_dir, double factor) {
  if (metrics.size() < 2) throw ConfigError("compare needs at least two metrics files");
  std::vector<MetricsFile> files;
  for (const fs::path& p : metrics) files.push_back(read_metrics(p));

  std::vector<std::string> labels;
  for (const fs::path& p : metrics) {
    std::string label = p.stem().string();
    if (p.has_parent_path() && !p.parent_path().filename().empty()) label = p.parent_path().filename().string() + "/" + label;
    std::string unique = label;
    for (int n = 2; std::find(labels.begin(), labels.end(), unique) != labels.end(); ++n) {
      unique = label + "#" + std::to_string(n);
    }
    labels.push_back(unique);
  }

  CompareResult result;
  std::size_t common = files[0].rows.size();
  bool mismatch = false;
  for (const MetricsFile& f : files) {
    mismatch = mismatch || f.rows.size() != common;
    common = std::min(common, f.rows.size());
  }
  if (mismatch) {
    std::string msg = "episode counts differ (";
    for (std::size_t i = 0; i < files.size(); ++i) {
      msg += (i ? ", " : "") + labels[i] + ": " + std::to_string(files[i].rows.size());
    }
    msg += "); truncating to the first " + std::to_string(common);
    result.warnings.push_back(msg);
  }
  for (MetricsFile& f : files) f.rows.resize(common);
  result.common_episodes = static_cast<long>(common);

  std::vector<std::vector<double>> ret(files.size());
  std::vector<std::vector<double>> succ(files.size());
  std::vector<std::vector<double>> time(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::vector<double> r;
    std::vector<double> s;
    for (const MetricsRow& row : files[i].rows) {
      r.push_back(row.discounted_return);
      s.push_back(row.outcome == env::OutcomeKind::success ? 1.0 : 0.0);
    }
    ret[i] = smooth(r, factor);
    succ[i] = smooth(s, factor);
    time[i] = smoothed_navigation_time(files[i].rows, factor);
    result.summaries.emplace_back(labels[i], summarize(files[i].rows));
  }

  fs::create_directories(out_dir);
  result.curves_path = out_dir / "compare_curves.csv";
  std::ofstream curves(result.curves_path, std::ios::trunc);
  if (!curves) throw std::runtime_error("cannot write " + result.curves_path.string());
  curves << "# smoothing_factor = " << num(factor) << "\n";
  curves << "episode";
  for (const std::string& l : labels) curves << ',' << l << ":return," << l << ":success," << l << ":navigation_time";
  curves << "\n";
  for (std::size_t t = 0; t < common; ++t) {
    curves << files[0].rows[t].episode;
    for (std::size_t i = 0; i < files.size(); ++i) {
      curves << ',' << num(ret[i][t]) << ',' << num(succ[i][t]) << ',' << num(time[i][t]);
    }
    curves << "\n";
  }
  std::ofstream summary(out_dir / "compare_summary.txt", std::ios::trunc);
  summary << format_summary_table(result.summaries);
  return result;
}

}  // namespace crowdnav::harness
