#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "crowdnav/env.hpp"
#include "crowdnav/nn.hpp"
#include "crowdnav/random.hpp"

// Double dueling deep Q-learning over encoded joint states.
namespace crowdnav::rl {

using Net = nn::Network<float>;
using Mat = nn::Matrix<float>;

struct QNetworkConfig {
  std::vector<int> encoder_hidden{256, 128};
  std::vector<int> value_hidden{128};
  std::vector<int> advantage_hidden{128};
  bool noisy = false;
  bool dropout = false;
  double dropout_rate = 0.5;
};

/// Q(s, a) = V(s) + A(s, a) - mean_a A(s, a) on top of a shared encoder.
class QNetwork {
 public:
  QNetwork(std::size_t feature_dim, std::size_t num_actions, const QNetworkConfig& cfg, Rng& init);

  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t num_actions() const { return num_actions_; }

  /// features: feature_dim x batch. Returns num_actions x batch.
  Mat q_values(const Mat& features, const nn::ForwardOptions& opt = {});
  std::vector<float> q_values(std::span<const float> features, const nn::ForwardOptions& opt = {});

  /// Backpropagates d(loss)/dQ through the heads and the encoder of the most
  /// recent q_values call.
  void backward(const Mat& grad_q);

  void zero_grad();
  std::vector<nn::ParamView<float>> params();
  void resample_noise(Rng& rng);
  void set_dropout_rate(double rate);

  std::string descriptor() const;
  /// Hard copy; throws nn::ShapeError when architectures differ.
  void copy_from(QNetwork& other);

  std::vector<std::uint8_t> save();
  /// Throws nn::CheckpointError on corrupt or mismatched blobs.
  void load(std::span<const std::uint8_t> blob);

  Net& encoder() { return encoder_; }
  Net& value_head() { return value_; }
  Net& advantage_head() { return advantage_; }

  static Mat aggregate(const Mat& value, const Mat& advantage);

 private:
  std::vector<nn::NamedNetwork<float>> named();

  std::size_t feature_dim_;
  std::size_t num_actions_;
  Net encoder_;
  Net value_;
  Net advantage_;
};

/// Lowest index wins ties.
std::size_t greedy_action(std::span<const float> q);

struct Transition {
  std::vector<float> state;
  std::size_t action = 0;
  double reward = 0.0;     // extrinsic, n-step discounted sum
  double intrinsic = 0.0;  // collection-time intrinsic reward, same accumulation
  std::vector<float> next_state;
  bool terminal = false;
  int n_steps = 1;  // bootstrap exponent
  std::shared_ptr<const env::JointState> raw_state;
  std::shared_ptr<const env::JointState> raw_next_state;
};

/// Folds consecutive one-step transitions of one episode into n-step ones.
std::vector<Transition> to_n_step(const std::vector<Transition>& one_step, int n, double gamma);

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::uint64_t sampler_seed);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return data_.size(); }
  void push(Transition t);
  /// i = 0 is the oldest retained transition.
  const Transition& at(std::size_t i) const;
  /// Uniform with replacement; indices refer to at().
  std::vector<std::size_t> sample(std::size_t batch_size);

 private:
  std::vector<Transition> data_;
  std::size_t head_ = 0;  // next write slot
  std::size_t size_ = 0;
  Rng sampler_;
};

/// Double-DQN target for one transition using its stored extrinsic reward.
double td_target(const Transition& t, QNetwork& online, QNetwork& target, double gamma);

/// Batched targets: r + gamma^n Q_target(s', argmax_a Q_online(s', a)), or r
/// alone for terminal rows. next_states is feature_dim x batch.
std::vector<double> td_targets(std::span<const double> rewards, const Mat& next_states,
                               std::span<const std::uint8_t> terminal, std::span<const int> n_steps,
                               QNetwork& online, QNetwork& target, double gamma,
                               const nn::ForwardOptions& online_opt = {}, const nn::ForwardOptions& target_opt = {});

struct TrainStepOptions {
  nn::ForwardOptions online;         // forward mode for Q(s, .)
  nn::ForwardOptions bootstrap;      // forward mode for the s' evaluations
  /// Maps sampled buffer indices to the rewards used for learning. Defaults
  /// to the stored extrinsic reward.
  std::function<std::vector<double>(std::span<const std::size_t>)> rewards;
};

struct TrainStepResult {
  double loss = 0.0;
  std::vector<std::size_t> indices;
};

/// Samples a batch and takes one optimizer step on the online net. Returns
/// nullopt (and changes nothing) when the buffer holds fewer than batch_size
/// transitions.
std::optional<TrainStepResult> train_step(ReplayBuffer& buffer, QNetwork& online, QNetwork& target,
                                          nn::Adam<float>& opt, std::size_t batch_size, double gamma,
                                          const TrainStepOptions& options = {});

/// Hard target update every `interval` ticks.
class TargetSync {
 public:
  explicit TargetSync(long interval);
  /// Returns true when this tick copied the online weights.
  bool tick(QNetwork& online, QNetwork& target);
  long count() const { return count_; }

 private:
  long interval_;
  long count_ = 0;
};

struct Demonstration {
  std::vector<float> state;
  std::size_t action = 0;
  double value = 0.0;  // observed discounted return from this state
};

/// Rolls out the ORCA robot snapped to the nearest discrete action and
/// records discounted returns-to-go.
std::vector<Demonstration> collect_demonstrations(const env::EnvConfig& cfg, env::ScenarioKind kind, int episodes,
                                                  std::uint64_t seed);

/// Regresses Q(s, a_demo) toward the demonstration values. Throws
/// std::invalid_argument on an empty demonstration set.
void il_pretrain(std::span<const Demonstration> demos, QNetwork& net, int epochs, double learning_rate = 1e-3,
                 std::size_t batch_size = 128, std::uint64_t seed = 0);

}  // namespace crowdnav::rl
