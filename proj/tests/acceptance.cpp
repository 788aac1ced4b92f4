// Acceptance run: one line per criterion, "criterion N: PASS" or "criterion N: FAIL".
// Slow on purpose; criteria 1-3 run full evaluations and three trainings.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>

#include "crowdnav/agent.hpp"
#include "crowdnav/config.hpp"
#include "crowdnav/env.hpp"
#include "crowdnav/exploration.hpp"
#include "crowdnav/harness.hpp"
#include "crowdnav/orca.hpp"
#include "oracles.hpp"

using namespace crowdnav;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path p = fs::temp_directory_path() / "crowdnav_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void note(const std::string& line) { std::printf("  %s\n", line.c_str()); }

std::string sci(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

std::string fixed(double x, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

harness::Summary orca_baseline(const std::string& scenario) {
  const RunConfig rc = resolve_config({{"out", (work_dir() / ("orca_" + scenario)).string()},
                                       {"env.scenario", scenario},
                                       {"eval.episodes", "1000"}});
  const auto r = harness::evaluate(rc, "orca");
  note("success " + fixed(r.summary.success_rate) + ", collision " + fixed(r.summary.collision_rate) + ", timeout " +
       fixed(r.summary.timeout_rate) + ", time " + fixed(r.summary.navigation_time) + " s, return " +
       fixed(r.summary.average_return));
  return r.summary;
}

// Criterion 3 trainings are shared with criterion 9.
struct DeskRuns {
  std::map<std::string, harness::TrainResult> runs;
  RunConfig re3_config;
};

KeyValues desk_config(const std::string& strategy) {
  return {{"out", (work_dir() / ("desk_" + strategy)).string()},
          {"strategy.kind", strategy},
          {"train.episodes", "2000"},
          {"env.num_humans", "5"}};
}

const DeskRuns& desk_runs() {
  static const DeskRuns runs = [] {
    DeskRuns d;
    for (const std::string s : {"epsilon", "icm", "re3"}) {
      const RunConfig rc = resolve_config(desk_config(s));
      if (s == "re3") d.re3_config = rc;
      d.runs.emplace(s, harness::train(rc));
    }
    return d;
  }();
  return runs;
}

double final_smoothed_success(const std::vector<harness::MetricsRow>& rows) {
  std::vector<double> success;
  for (const auto& r : rows) success.push_back(r.outcome == env::OutcomeKind::success ? 1.0 : 0.0);
  return harness::smooth(success, 0.99).back();
}

using rl::Mat;

rl::QNetworkConfig small_net() {
  rl::QNetworkConfig c;
  c.encoder_hidden = {16, 8};
  c.value_hidden = {8};
  c.advantage_hidden = {8};
  return c;
}

void pin_head(rl::Net& head, const std::vector<float>& bias) {
  auto& d = dynamic_cast<nn::Dense<float>&>(head.layer(head.num_layers() - 1));
  d.weight().setZero();
  d.bias() = Eigen::Map<const Eigen::VectorXf>(bias.data(), static_cast<Eigen::Index>(bias.size()));
}

std::vector<float> random_vec(Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  std::normal_distribution<float> d(0.0f, 1.0f);
  for (auto& x : v) x = d(rng);
  return v;
}

Mat column(const std::vector<float>& v) {
  Mat m(static_cast<Eigen::Index>(v.size()), 1);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

env::JointState two_body(Vec2 robot, Vec2 goal, Vec2 human) {
  env::JointState s;
  s.robot.position = robot;
  s.robot.goal = goal;
  s.humans.push_back(env::HumanState{human, {}, 0.3});
  return s;
}

}  // namespace

TEST(Acceptance, Criterion01_OrcaCircle) {
  const auto s = orca_baseline("circle");
  EXPECT_NEAR(s.success_rate, 0.769, 0.08);
  EXPECT_NEAR(s.navigation_time, 13.880, 1.5);
}

TEST(Acceptance, Criterion02_OrcaSquare) {
  const auto s = orca_baseline("square");
  EXPECT_NEAR(s.success_rate, 0.840, 0.08);
  EXPECT_NEAR(s.navigation_time, 12.856, 1.5);
}

TEST(Acceptance, Criterion03_IntrinsicBeatsEpsilon) {
  const auto& d = desk_runs();
  const double eps = final_smoothed_success(d.runs.at("epsilon").rows);
  const double icm = final_smoothed_success(d.runs.at("icm").rows);
  const double re3 = final_smoothed_success(d.runs.at("re3").rows);
  note("smoothed success at episode 2000: epsilon " + fixed(eps, 4) + ", icm " + fixed(icm, 4) + ", re3 " +
       fixed(re3, 4));
  EXPECT_GE(icm, eps);
  EXPECT_GE(re3, eps);
  EXPECT_GE(icm - eps, 0.02);
  EXPECT_GE(re3 - eps, 0.02);
}

TEST(Acceptance, Criterion04_RewardExamples) {
  using env::OutcomeKind;
  const auto far = two_body({0, 0}, {0, 1}, {3, 3});
  EXPECT_EQ(env::compute_reward(far, far, OutcomeKind::success), 0.25);
  EXPECT_EQ(env::compute_reward(far, far, OutcomeKind::collision), -0.25);
  const auto still = two_body({0, 0}, {0, 3}, {2, 0});
  EXPECT_EQ(env::compute_reward(still, still, std::nullopt), 0.0);
  // 0.1 m of progress with a human 0.1 m inside the discomfort zone.
  const auto s = two_body({0, 0}, {0, 1}, {0.7, 0.1});
  const auto n = two_body({0, 0.1}, {0, 1}, {0.7, 0.1});
  EXPECT_DOUBLE_EQ(env::compute_reward(s, n, std::nullopt), -0.08);
}

TEST(Acceptance, Criterion05_Kinematics) {
  Rng rng(derive_seed(0, SeedStream::evaluation, 5));
  const env::ActionSet set = env::build_action_space(1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100000; ++trial) {
    env::RobotState r;
    r.position = {uniform(rng, -10, 10), uniform(rng, -10, 10)};
    r.heading = uniform(rng, 0, kTwoPi);
    const env::Action a = set[static_cast<std::size_t>(trial % 81)];
    const double dt = uniform(rng, 0.05, 0.5);
    const env::RobotState n = env::step_kinematics(r, a, dt);
    const oracle::Pose p = oracle::unicycle(r.position.x, r.position.y, r.heading, a.speed, a.steering, dt);
    worst = std::max({worst, std::abs(n.position.x - p.x), std::abs(n.position.y - p.y),
                      std::abs(n.velocity.x - p.vx), std::abs(n.velocity.y - p.vy),
                      std::abs(wrap_signed_angle(n.heading - p.theta))});
    ASSERT_GE(n.heading, 0.0);
    ASSERT_LT(n.heading, kTwoPi);
  }
  note("max deviation " + sci(worst));
  EXPECT_LE(worst, 1e-12);
}

TEST(Acceptance, Criterion06_GradientChecks) {
  Rng rng(derive_seed(0, SeedStream::evaluation, 6));
  int checked = 0, redrawn = 0;
  double worst = 0.0;
  while (checked < 100) {
    const double err = oracle::gradient_check(rng);
    if (err < 0.0) {
      ++redrawn;
      continue;
    }
    ++checked;
    worst = std::max(worst, err);
  }
  note("100 networks, max relative error " + sci(worst) + " (" + std::to_string(redrawn) +
       " draws too close to a ReLU kink redrawn)");
  EXPECT_LT(worst, 1e-4);
}

TEST(Acceptance, Criterion07_IntrinsicZeroCases) {
  Rng rng(derive_seed(0, SeedStream::evaluation, 7));
  const std::size_t dim = 20;
  explore::IcmModule icm(dim, 81, rng);
  const auto s = random_vec(rng, dim);
  const auto s_next = random_vec(rng, dim);
  auto& out = dynamic_cast<nn::Dense<float>&>(icm.forward_model().layer(icm.forward_model().num_layers() - 1));
  out.weight().setZero();
  out.bias() = icm.embed(column(s_next)).col(0);
  EXPECT_EQ(icm.intrinsic(s, 7, s_next), 0.0);

  explore::Re3Module re3(dim, rng, 3);
  for (int i = 0; i < 3; ++i) re3.intrinsic(s);
  EXPECT_EQ(re3.query(s), 0.0);

  const explore::Strategy icm_strategy = explore::IcmConfig{};
  const explore::Strategy re3_strategy = explore::Re3Config{};
  EXPECT_EQ(explore::augment_reward(icm_strategy, 0.1, 2.0), 0.1 + 0.01 * 2.0);
  EXPECT_EQ(explore::augment_reward(re3_strategy, -0.25, 2.5), -0.25 + 0.01 * 2.5);
  EXPECT_EQ(explore::augment_reward(explore::Strategy{explore::EpsilonGreedy{}}, 0.1, 2.0), 0.1);
}

TEST(Acceptance, Criterion08_IcmConverges) {
  Rng rng(derive_seed(0, SeedStream::evaluation, 8));
  const std::size_t dim = 20;
  explore::IcmModule icm(dim, 81, rng);
  const auto s = random_vec(rng, dim);
  const auto s_next = random_vec(rng, dim);
  const std::size_t a = 12;
  const double before = icm.intrinsic(s, a, s_next);
  for (int i = 0; i < 500; ++i) icm.update(column(s), std::span<const std::size_t>(&a, 1), column(s_next));
  const double after = icm.intrinsic(s, a, s_next);
  note("intrinsic " + sci(before) + " -> " + sci(after));
  EXPECT_GT(before, 0.0);
  EXPECT_LT(after, 0.1 * before);
}

TEST(Acceptance, Criterion09_Re3FrozenEncoder) {
  const auto& d = desk_runs();
  const auto& blob = d.runs.at("re3").re3_encoder;
  const auto* cfg = std::get_if<explore::Re3Config>(&d.re3_config.strategy);
  ASSERT_NE(cfg, nullptr);
  Rng init(derive_seed(d.re3_config.seed, SeedStream::re3_init));
  explore::Re3Module fresh(env::feature_size(static_cast<std::size_t>(d.re3_config.env.num_humans)), init, cfg->k,
                           cfg->store_capacity, cfg->average_knn);
  ASSERT_FALSE(blob.empty());
  EXPECT_TRUE(blob == fresh.encoder_blob()) << "encoder weights changed during training";

  Rng rng(derive_seed(0, SeedStream::evaluation, 9));
  const std::size_t dim = 20;
  int violations = 0;
  for (int c = 0; c < 1000; ++c) {
    explore::Re3Module re3(dim, rng, 1 + c % 5, 64);
    const auto q = random_vec(rng, dim);
    double prev = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 40; ++i) {
      re3.insert_embedding(re3.embed(random_vec(rng, dim)));
      if (re3.store_size() < static_cast<std::size_t>(re3.k())) continue;
      const double r = re3.query(q);
      if (r > prev) ++violations;
      prev = r;
    }
  }
  EXPECT_EQ(violations, 0);
}

TEST(Acceptance, Criterion10_DuelingInvariants) {
  using rl::QNetwork;
  const std::size_t actions = 81, dim = 12;
  Rng rng(derive_seed(0, SeedStream::evaluation, 10));
  // Dyadic advantages summing to zero keep every sum and the mean exact, so
  // a shift has to vanish bit for bit.
  for (int trial = 0; trial < 200; ++trial) {
    Mat v(1, 1);
    v(0, 0) = static_cast<float>(std::floor(uniform(rng, -64, 64))) / 16.0f;
    Mat a(static_cast<Eigen::Index>(actions), 1);
    float sum = 0.0f;
    for (Eigen::Index i = 0; i + 1 < a.rows(); ++i) {
      a(i, 0) = static_cast<float>(std::floor(uniform(rng, -32, 32))) / 8.0f;
      sum += a(i, 0);
    }
    a(a.rows() - 1, 0) = -sum;
    const float c = static_cast<float>(std::floor(uniform(rng, -16, 16))) / 4.0f;
    ASSERT_TRUE(QNetwork::aggregate(v, a) == QNetwork::aggregate(v, (a.array() + c).matrix())) << "trial " << trial;
  }
  // Arbitrary floats: equal up to rounding of the mean, same greedy action.
  for (int trial = 0; trial < 200; ++trial) {
    Mat v(1, 1);
    v(0, 0) = static_cast<float>(uniform(rng, -2, 2));
    Mat a(static_cast<Eigen::Index>(actions), 1);
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, 0) = static_cast<float>(uniform(rng, -1, 1));
    const float c = static_cast<float>(uniform(rng, -5, 5));
    const Mat q = QNetwork::aggregate(v, a);
    const Mat shifted = QNetwork::aggregate(v, (a.array() + c).matrix());
    ASSERT_LE((q - shifted).cwiseAbs().maxCoeff(), 1e-5f) << "trial " << trial;
  }

  QNetwork online(dim, actions, small_net(), rng);
  QNetwork target(dim, actions, small_net(), rng);
  rl::Transition t;
  t.state = random_vec(rng, dim);
  t.next_state = random_vec(rng, dim);

  // Online picks action 3; the target prefers 5 but is asked about 3.
  std::vector<float> online_adv(actions, 0.0f);
  online_adv[3] = 1.0f;
  pin_head(online.advantage_head(), online_adv);
  pin_head(online.value_head(), {0.0f});
  std::vector<float> target_adv(actions, 0.0f);
  target_adv[5] = 81.0f;
  pin_head(target.advantage_head(), target_adv);
  pin_head(target.value_head(), {1.5f});
  EXPECT_EQ(rl::td_target(t, online, target, 0.9), 0.9 * 0.5);

  t.reward = 0.25;
  t.terminal = true;
  EXPECT_EQ(rl::td_target(t, online, target, 0.9), 0.25);

  t.reward = -0.37;
  t.terminal = false;
  EXPECT_EQ(rl::td_target(t, online, target, 0.0), -0.37);
}

TEST(Acceptance, Criterion11_LpMatchesGrid) {
  Rng rng(derive_seed(0, SeedStream::evaluation, 11));
  const double h = 2.0 / 999.0;
  int feasible = 0, fallback = 0, sliver = 0;
  double widest_gap = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<orca::HalfPlane> lines;
    const int count = 1 + trial % 8;
    for (int i = 0; i < count; ++i) {
      lines.push_back(orca::HalfPlane{from_polar(uniform(rng, 0, 1.2), uniform(rng, 0, kTwoPi)),
                                      from_polar(1.0, uniform(rng, 0, kTwoPi))});
    }
    const Vec2 pref = from_polar(uniform(rng, 0, 1.3), uniform(rng, 0, kTwoPi));
    const Vec2 out = orca::solve_lp(lines, pref, 1.0);
    ASSERT_LE(out.norm(), 1.0 + 1e-9);
    const auto grid = oracle::lp_grid(lines, pref.x, pref.y, 1.0, 1000);
    const double viol = oracle::max_violation(lines, out.x, out.y);
    if (grid.feasible) {
      ++feasible;
      // No sample of the grid is strictly closer to pref than the solver.
      ASSERT_LE(viol, 1e-9) << "trial " << trial;
      ASSERT_LE((out - pref).norm(), grid.objective + 1e-12) << "trial " << trial;
      widest_gap = std::max(widest_gap, (grid.objective - (out - pref).norm()) / h);
    } else if (viol > 1e-9) {
      ++fallback;
      ASSERT_LE(viol, grid.objective + 1e-12) << "trial " << trial;
      ASSERT_GE(viol, grid.objective - h) << "trial " << trial;
    } else {
      ++sliver;  // feasible region thinner than the grid
      ASSERT_LE(grid.objective, h) << "trial " << trial;
    }
  }
  note(std::to_string(feasible) + " feasible, " + std::to_string(fallback) + " fallback, " + std::to_string(sliver) +
       " sub-grid slivers; grid optimum at most " + fixed(widest_gap, 2) + " cells behind the solver");
}

TEST(Acceptance, Criterion12_Determinism) {
  const fs::path a = work_dir() / "det_a";
  const fs::path b = work_dir() / "det_b";
  int compared = 0;
  auto same = [&](const fs::path& x, const fs::path& y) {
    ASSERT_TRUE(fs::exists(x)) << x;
    ASSERT_TRUE(fs::exists(y)) << y;
    EXPECT_TRUE(slurp(x) == slurp(y)) << x << " vs " << y;
    ++compared;
  };
  for (const std::string strategy : {"epsilon", "noisy", "dropout", "icm", "re3"}) {
    for (const fs::path& dir : {a, b}) {
      harness::train(resolve_config({{"out", (dir / strategy).string()},
                                     {"strategy.kind", strategy},
                                     {"seed", "42"},
                                     {"train.episodes", "60"},
                                     {"train.warmup", "200"},
                                     {"train.batch_size", "32"},
                                     {"train.validation_interval", "30"},
                                     {"train.validation_episodes", "5"},
                                     {"train.checkpoint_interval", "30"},
                                     {"env.num_humans", "5"}}));
    }
    same(a / strategy / "metrics.csv", b / strategy / "metrics.csv");
    same(a / strategy / "validation.csv", b / strategy / "validation.csv");
    same(a / strategy / "checkpoint_000060.cnnw", b / strategy / "checkpoint_000060.cnnw");
  }
  for (const std::string target : {"orca", "stop", "straight"}) {
    for (const fs::path& dir : {a, b}) {
      harness::EvaluateOptions opt;
      opt.trajectory_episodes = 3;
      harness::evaluate(resolve_config({{"out", dir.string()}, {"eval.episodes", "50"}, {"seed", "42"}}), target, opt);
    }
    same(a / ("eval_" + target + "_circle.csv"), b / ("eval_" + target + "_circle.csv"));
    same(a / ("trajectories_" + target + "_circle.csv"), b / ("trajectories_" + target + "_circle.csv"));
  }
  for (const fs::path& dir : {a, b}) {
    const RunConfig rc = resolve_config({{"out", dir.string()}, {"eval.episodes", "50"}, {"seed", "42"},
                                         {"env.num_humans", "5"}});
    harness::evaluate(rc, (dir / "re3" / "checkpoint_000060.cnnw").string());
    harness::compare({dir / "epsilon" / "metrics.csv", dir / "re3" / "metrics.csv"}, dir / "cmp");
  }
  same(a / "eval_checkpoint_000060_circle.csv", b / "eval_checkpoint_000060_circle.csv");
  same(a / "cmp" / "compare_curves.csv", b / "cmp" / "compare_curves.csv");
  note(std::to_string(compared) + " output files compared byte for byte");
}

namespace {

class CriterionPrinter : public testing::EmptyTestEventListener {
 public:
  void OnTestEnd(const testing::TestInfo& info) override {
    static const std::regex name("Criterion(\\d+)_");
    std::cmatch m;
    if (!std::regex_search(info.name(), m, name)) return;
    const bool ok = info.result()->Passed();
    std::printf("criterion %d: %s\n", std::stoi(m[1]), ok ? "PASS" : "FAIL");
    std::fflush(stdout);
  }
};

}  // namespace

int main(int argc, char** argv) {
  testing::InitGoogleTest(&argc, argv);
  testing::UnitTest::GetInstance()->listeners().Append(new CriterionPrinter);
  return RUN_ALL_TESTS();
}
