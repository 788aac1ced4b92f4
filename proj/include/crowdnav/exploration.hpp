#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "crowdnav/agent.hpp"
#include "crowdnav/nn.hpp"
#include "crowdnav/random.hpp"

namespace crowdnav::explore {

using rl::Mat;

struct EpsilonGreedy {
  double start = 0.5;
  double end = 0.1;
  int decay_episodes = 4000;
};

struct NoisyNets {};

struct DecayingDropout {
  double rate_start = 0.5;
  double rate_end = 0.01;
  int decay_episodes = 7000;
};

struct IcmConfig {
  double beta = 0.01;
  double inverse_weight = 0.2;  // lambda; the forward loss gets 1 - lambda
  double learning_rate = 1e-3;
  bool recompute = false;       // refresh r_in at training time instead of freezing it
  double epsilon = 0.0;         // optional epsilon-greedy stacked on top
};

struct Re3Config {
  double beta = 0.01;
  int k = 3;
  std::size_t store_capacity = 10000;
  bool average_knn = false;  // mean over the k nearest instead of the k-th
  bool recompute = true;
  double epsilon = 0.0;
};

using Strategy = std::variant<EpsilonGreedy, NoisyNets, DecayingDropout, IcmConfig, Re3Config>;

/// "epsilon" | "noisy" | "dropout" | "icm" | "re3"
std::string strategy_name(const Strategy& s);

/// Linear from `start` at episode 0 to `end` at `decay_episodes`, then flat.
double linear_decay(double start, double end, int decay_episodes, long episode);

double epsilon_at(const Strategy& s, long episode);
double dropout_rate(const DecayingDropout& d, long episode);
double dropout_rate_at(const Strategy& s, long episode);

/// Intrinsic-reward weight; zero for strategies without intrinsic rewards.
double beta(const Strategy& s);

/// Forward options the acting network should use for one decision.
nn::ForwardOptions acting_options(const Strategy& s, Rng& rng);
/// Forward options for the online Q(s, .) pass of a training step.
nn::ForwardOptions training_options(const Strategy& s, Rng& rng);

/// Uniform random with probability epsilon(episode), otherwise greedy.
std::size_t select_action(const Strategy& s, std::span<const float> q, long episode, Rng& rng);

/// r = r_ex + beta * r_in for intrinsic strategies, r_ex otherwise.
double augment_reward(const Strategy& s, double r_ex, double r_in);

/// Mean squared error between two embeddings.
double embedding_mse(std::span<const float> a, std::span<const float> b);

/// Intrinsic curiosity: encoder phi, inverse model (phi(s), phi(s')) -> action
/// logits, forward model (phi(s), onehot(a)) -> phi(s').
class IcmModule {
 public:
  static constexpr int kEmbedding = 128;

  IcmModule(std::size_t feature_dim, std::size_t num_actions, Rng& init, double learning_rate = 1e-3,
            double inverse_weight = 0.2);

  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t num_actions() const { return num_actions_; }

  Mat embed(const Mat& states);
  Mat predict_next(const Mat& embeddings, std::span<const std::size_t> actions);

  double intrinsic(std::span<const float> s, std::size_t action, std::span<const float> s_next);
  std::vector<double> intrinsic_batch(const Mat& states, std::span<const std::size_t> actions, const Mat& next_states);

  /// One optimizer step on lambda * CE(inverse) + (1 - lambda) * MSE(forward).
  /// Returns (inverse loss, forward loss) before the step.
  std::pair<double, double> update(const Mat& states, std::span<const std::size_t> actions, const Mat& next_states);

  /// Inverse-model argmax per column.
  std::vector<std::size_t> predict_actions(const Mat& states, const Mat& next_states);

  void set_inverse_weight(double lambda);
  double inverse_weight() const { return inverse_weight_; }

  rl::Net& encoder() { return encoder_; }
  rl::Net& inverse_model() { return inverse_; }
  rl::Net& forward_model() { return forward_; }

 private:
  Mat forward_input(const Mat& embeddings, std::span<const std::size_t> actions) const;

  std::size_t feature_dim_;
  std::size_t num_actions_;
  double inverse_weight_;
  rl::Net encoder_;
  rl::Net inverse_;
  rl::Net forward_;
  nn::Adam<float> opt_encoder_;
  nn::Adam<float> opt_inverse_;
  nn::Adam<float> opt_forward_;
};

/// Random-encoder state entropy: a frozen randomly initialized encoder and a
/// ring buffer of embeddings; r_in = log(1 + distance to the k-th nearest
/// stored embedding).
class Re3Module {
 public:
  static constexpr int kEmbedding = 128;

  Re3Module(std::size_t feature_dim, Rng& init, int k = 3, std::size_t capacity = 10000, bool average_knn = false);

  std::size_t store_size() const { return count_; }
  std::size_t capacity() const { return static_cast<std::size_t>(store_.cols()); }
  int k() const { return k_; }

  std::vector<float> embed(std::span<const float> s);
  Mat embed_batch(const Mat& states);

  /// k-NN reward against the current store; 0 for an empty store. With fewer
  /// than k stored embeddings the farthest one is used.
  double query(std::span<const float> s);
  double query_embedding(std::span<const float> e) const;
  std::vector<double> query_batch(const Mat& states);

  /// query() followed by inserting the embedding of s.
  double intrinsic(std::span<const float> s);
  void insert_embedding(std::span<const float> e);

  /// Encoder weights as a serialized blob (for immutability checks).
  std::vector<std::uint8_t> encoder_blob();

 private:
  double reward_from_sorted(const std::vector<double>& sorted_dists) const;

  std::size_t feature_dim_;
  int k_;
  bool average_;
  rl::Net encoder_;
  Eigen::MatrixXf store_;  // kEmbedding x capacity
  Eigen::VectorXf store_sq_norm_;
  std::size_t count_ = 0;
  std::size_t head_ = 0;
};

}  // namespace crowdnav::explore
