#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <optional>
#include <ostream>

#include "crowdnav/harness.hpp"
#include "crowdnav/plot.hpp"

namespace crowdnav::cli {

namespace {

bool is_dotted_flag(const std::string& token) {
  if (token.rfind("--", 0) != 0) return false;
  const std::string name = token.substr(2, token.find('=') == std::string::npos ? std::string::npos : token.find('=') - 2);
  return name.find('.') != std::string::npos;
}

/// Splits out the dotted overrides so that CLI11 only sees its own options.
std::vector<std::string> extract_overrides(std::vector<std::string>& args) {
  std::vector<std::string> overrides;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (!is_dotted_flag(args[i])) {
      rest.push_back(args[i]);
      continue;
    }
    overrides.push_back(args[i]);
    if (args[i].find('=') == std::string::npos) {
      if (i + 1 >= args.size()) throw ConfigError("config: " + args[i] + " needs a value");
      overrides.push_back(args[++i]);
    }
  }
  args = std::move(rest);
  return overrides;
}

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<long> episodes;
  std::string scenario;
  std::string strategy;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_strategy) {
  cmd->add_option("--config", f.config, "Config file (key = value lines)");
  cmd->add_option("--seed", f.seed, "Master seed");
  cmd->add_option("--episodes", f.episodes, "Number of episodes");
  cmd->add_option("--scenario", f.scenario, "circle | square");
  if (with_strategy) cmd->add_option("--strategy", f.strategy, "epsilon | noisy | dropout | icm | re3");
  cmd->add_option("--out", f.out, "Output directory");
}

RunConfig build_config(const CommonFlags& f, const std::vector<std::string>& overrides, const std::string& episodes_key) {
  KeyValues kv;
  if (!f.config.empty()) kv = read_config_file(f.config);
  apply_overrides(overrides, kv);
  if (f.seed) kv["seed"] = std::to_string(*f.seed);
  if (f.episodes) kv[episodes_key] = std::to_string(*f.episodes);
  if (!f.scenario.empty()) kv["env.scenario"] = f.scenario;
  if (!f.strategy.empty()) kv["strategy.kind"] = f.strategy;
  if (!f.out.empty()) kv["out"] = f.out;
  return resolve_config(kv);
}

}  // namespace

void apply_overrides(const std::vector<std::string>& tokens, KeyValues& kv) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    if (tok.rfind("--", 0) != 0) throw ConfigError("config: unexpected argument '" + tok + "'");
    const auto eq = tok.find('=');
    std::string key;
    std::string value;
    if (eq != std::string::npos) {
      key = tok.substr(2, eq - 2);
      value = tok.substr(eq + 1);
    } else {
      if (i + 1 >= tokens.size()) throw ConfigError("config: " + tok + " needs a value");
      key = tok.substr(2);
      value = tokens[++i];
    }
    if (key.empty()) throw ConfigError("config: empty override key");
    kv[key] = value;
  }
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args = raw_args;
  std::vector<std::string> overrides;
  try {
    overrides = extract_overrides(args);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  CLI::App app{"Crowd navigation with exploration strategies for deep Q-learning"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  std::string resume;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train a dueling double DQN agent");
  add_common(train, train_flags, true);
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_flag("--quiet", quiet, "No progress output");

  CommonFlags eval_flags;
  std::string target;
  std::optional<int> trajectories;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint or builtin policy (orca, stop, straight)");
  evaluate->add_option("policy", target, "orca | stop | straight | checkpoint path")->required();
  add_common(evaluate, eval_flags, false);
  evaluate->add_option("--trajectories", trajectories, "Write pose rows for the first N episodes");

  std::vector<std::string> metrics_files;
  std::string compare_out = "compare";
  double factor = 0.99;
  auto* compare = app.add_subcommand("compare", "Compare training or evaluation metrics files");
  compare->add_option("metrics", metrics_files, "Metrics files")->required()->expected(2, -1);
  compare->add_option("--out", compare_out, "Output directory");
  compare->add_option("--factor", factor, "Exponential smoothing factor in [0, 1)");

  std::string trajectory_file;
  std::string svg_out;
  std::optional<long> episode;
  auto* plot = app.add_subcommand("plot", "Render one episode of a trajectory file as SVG");
  plot->add_option("trajectory", trajectory_file, "Trajectory CSV written by evaluate --trajectories")->required();
  plot->add_option("--episode", episode, "Episode index (default: first in file)");
  plot->add_option("--out", svg_out, "Output SVG path")->required();

  std::vector<const char*> argv{"crowdnav"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
  if ((compare->parsed() || plot->parsed()) && !overrides.empty()) {
    err << "error: config overrides do not apply to this command\n";
    return kConfigError;
  }

  try {
    if (train->parsed()) {
      const RunConfig rc = build_config(train_flags, overrides, "train.episodes");
      harness::TrainOptions opt;
      if (!resume.empty()) opt.resume = resume;
      if (!quiet) opt.log = &err;
      const harness::TrainResult res = harness::train(rc, opt);
      out << "metrics: " << res.metrics_path.string() << "\n";
      for (const auto& c : res.checkpoints) out << "checkpoint: " << c.string() << "\n";
      if (res.best_checkpoint) out << "best: " << res.best_checkpoint->string() << "\n";
    } else if (evaluate->parsed()) {
      const RunConfig rc = build_config(eval_flags, overrides, "eval.episodes");
      harness::EvaluateOptions opt;
      opt.trajectory_episodes = trajectories;
      const harness::EvaluateResult res = harness::evaluate(rc, target, opt);
      out << harness::format_summary_table({{target, res.summary}});
      out << "metrics: " << res.metrics_path.string() << "\n";
      if (res.trajectory_path) out << "trajectories: " << res.trajectory_path->string() << "\n";
    } else if (compare->parsed()) {
      std::vector<std::filesystem::path> paths(metrics_files.begin(), metrics_files.end());
      const harness::CompareResult res = harness::compare(paths, compare_out, factor);
      for (const auto& w : res.warnings) err << "warning: " << w << "\n";
      out << harness::format_summary_table(res.summaries);
      out << "curves: " << res.curves_path.string() << "\n";
    } else if (plot->parsed()) {
      plot::plot_file(trajectory_file, svg_out, episode);
      out << "plot: " << svg_out << "\n";
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}

}  // namespace crowdnav::cli
