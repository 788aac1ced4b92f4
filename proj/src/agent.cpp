#include "crowdnav/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace crowdnav::rl {

namespace {

Mat column(std::span<const float> v) {
  Mat m(static_cast<nn::Index>(v.size()), 1);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

template <class Get>
Mat gather(std::size_t dim, std::size_t count, Get&& get) {
  Mat m(static_cast<nn::Index>(dim), static_cast<nn::Index>(count));
  for (std::size_t j = 0; j < count; ++j) {
    const std::vector<float>& v = get(j);
    if (v.size() != dim) throw nn::ShapeError("feature vector length mismatch");
    std::copy(v.begin(), v.end(), m.col(static_cast<nn::Index>(j)).data());
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// QNetwork

QNetwork::QNetwork(std::size_t feature_dim, std::size_t num_actions, const QNetworkConfig& cfg, Rng& init)
    : feature_dim_(feature_dim), num_actions_(num_actions) {
  if (cfg.encoder_hidden.empty()) throw std::invalid_argument("QNetwork: encoder needs at least one layer");
  const nn::MlpOptions opt{cfg.noisy, cfg.dropout, cfg.dropout_rate};

  // The encoder ends in an activation so the heads see rectified features.
  const std::vector<int> enc_hidden(cfg.encoder_hidden.begin(), cfg.encoder_hidden.end() - 1);
  encoder_ = nn::make_mlp<float>(static_cast<nn::Index>(feature_dim), enc_hidden, cfg.encoder_hidden.back(), init, opt);
  encoder_.add(std::make_unique<nn::Relu<float>>(cfg.encoder_hidden.back()));
  if (cfg.dropout) encoder_.add(std::make_unique<nn::Dropout<float>>(cfg.encoder_hidden.back(), cfg.dropout_rate));

  value_ = nn::make_mlp<float>(cfg.encoder_hidden.back(), cfg.value_hidden, 1, init, opt);
  advantage_ =
      nn::make_mlp<float>(cfg.encoder_hidden.back(), cfg.advantage_hidden, static_cast<nn::Index>(num_actions), init, opt);
}

Mat QNetwork::aggregate(const Mat& value, const Mat& advantage) {
  if (value.rows() != 1 || value.cols() != advantage.cols()) throw nn::ShapeError("dueling: head shapes disagree");
  const Eigen::RowVectorXf mean = advantage.colwise().mean();
  Mat q = advantage;
  q.rowwise() += value.row(0) - mean;
  return q;
}

Mat QNetwork::q_values(const Mat& features, const nn::ForwardOptions& opt) {
  if (features.rows() != static_cast<nn::Index>(feature_dim_)) {
    throw nn::ShapeError("QNetwork: feature length " + std::to_string(features.rows()) + ", expected " +
                         std::to_string(feature_dim_));
  }
  const Mat h = encoder_.forward(features, opt);
  return aggregate(value_.forward(h, opt), advantage_.forward(h, opt));
}

std::vector<float> QNetwork::q_values(std::span<const float> features, const nn::ForwardOptions& opt) {
  const Mat q = q_values(column(features), opt);
  return {q.data(), q.data() + q.size()};
}

void QNetwork::backward(const Mat& grad_q) {
  // dV = sum_a dQ_a ; dA_a = dQ_a - mean_b dQ_b
  const Mat grad_value = grad_q.colwise().sum();
  Mat grad_adv = grad_q;
  grad_adv.rowwise() -= grad_q.colwise().mean();
  const Mat gh = value_.backward(grad_value) + advantage_.backward(grad_adv);
  encoder_.backward(gh);
}

void QNetwork::zero_grad() {
  encoder_.zero_grad();
  value_.zero_grad();
  advantage_.zero_grad();
}

std::vector<nn::ParamView<float>> QNetwork::params() {
  auto out = encoder_.params();
  for (auto* net : {&value_, &advantage_}) {
    auto p = net->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void QNetwork::resample_noise(Rng& rng) {
  encoder_.resample_noise(rng);
  value_.resample_noise(rng);
  advantage_.resample_noise(rng);
}

void QNetwork::set_dropout_rate(double rate) {
  encoder_.set_dropout_rate(rate);
  value_.set_dropout_rate(rate);
  advantage_.set_dropout_rate(rate);
}

std::vector<nn::NamedNetwork<float>> QNetwork::named() {
  return {{"encoder", &encoder_}, {"value", &value_}, {"advantage", &advantage_}};
}

std::string QNetwork::descriptor() const {
  return "encoder=" + encoder_.descriptor() + "|value=" + value_.descriptor() + "|advantage=" + advantage_.descriptor();
}

void QNetwork::copy_from(QNetwork& other) {
  if (descriptor() != other.descriptor()) throw nn::ShapeError("QNetwork: copy between different architectures");
  encoder_.copy_params_from(other.encoder_);
  value_.copy_params_from(other.value_);
  advantage_.copy_params_from(other.advantage_);
}

std::vector<std::uint8_t> QNetwork::save() {
  const auto nets = named();
  return nn::save_weights<float>(nets);
}

void QNetwork::load(std::span<const std::uint8_t> blob) {
  const auto nets = named();
  nn::load_weights_into<float>(nets, blob);
}

std::size_t greedy_action(std::span<const float> q) {
  if (q.empty()) throw std::invalid_argument("greedy_action: empty q-vector");
  return static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
}

// ---------------------------------------------------------------------------
// Transitions and replay

std::vector<Transition> to_n_step(const std::vector<Transition>& one_step, int n, double gamma) {
  if (n < 1) throw std::invalid_argument("to_n_step: n must be at least 1");
  if (n == 1) return one_step;
  std::vector<Transition> out;
  out.reserve(one_step.size());
  for (std::size_t t = 0; t < one_step.size(); ++t) {
    Transition tr = one_step[t];
    tr.reward = 0.0;
    tr.intrinsic = 0.0;
    double discount = 1.0;
    int k = 0;
    std::size_t last = t;
    for (; k < n && t + k < one_step.size(); ++k) {
      const Transition& step = one_step[t + k];
      tr.reward += discount * step.reward;
      tr.intrinsic += discount * step.intrinsic;
      discount *= gamma;
      last = t + k;
      if (step.terminal) {
        ++k;
        break;
      }
    }
    tr.next_state = one_step[last].next_state;
    tr.raw_next_state = one_step[last].raw_next_state;
    tr.terminal = one_step[last].terminal;
    tr.n_steps = k;
    out.push_back(std::move(tr));
  }
  return out;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t sampler_seed) : data_(capacity), sampler_(sampler_seed) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  data_[head_] = std::move(t);
  head_ = (head_ + 1) % data_.size();
  size_ = std::min(size_ + 1, data_.size());
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw std::out_of_range("ReplayBuffer::at");
  const std::size_t oldest = size_ < data_.size() ? 0 : head_;
  return data_[(oldest + i) % data_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t batch_size) {
  if (size_ == 0) throw std::logic_error("ReplayBuffer::sample on empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<std::size_t> out(batch_size);
  for (auto& i : out) i = pick(sampler_);
  return out;
}

// ---------------------------------------------------------------------------
// Targets and updates

std::vector<double> td_targets(std::span<const double> rewards, const Mat& next_states,
                               std::span<const std::uint8_t> terminal, std::span<const int> n_steps,
                               QNetwork& online, QNetwork& target, double gamma, const nn::ForwardOptions& online_opt,
                               const nn::ForwardOptions& target_opt) {
  const std::size_t batch = rewards.size();
  if (static_cast<std::size_t>(next_states.cols()) != batch || terminal.size() != batch || n_steps.size() != batch) {
    throw nn::ShapeError("td_targets: batch sizes disagree");
  }
  std::vector<double> out(rewards.begin(), rewards.end());
  if (gamma == 0.0) return out;

  // Online net selects, target net evaluates.
  const Mat q_online = online.q_values(next_states, online_opt);
  const Mat q_target = target.q_values(next_states, target_opt);
  for (std::size_t j = 0; j < batch; ++j) {
    if (terminal[j]) continue;
    const auto col = static_cast<nn::Index>(j);
    const std::size_t best = greedy_action(std::span<const float>(q_online.col(col).data(), q_online.rows()));
    out[j] += std::pow(gamma, n_steps[j]) * static_cast<double>(q_target(static_cast<nn::Index>(best), col));
  }
  return out;
}

double td_target(const Transition& t, QNetwork& online, QNetwork& target, double gamma) {
  const double r = t.reward;
  const std::uint8_t term = t.terminal ? 1 : 0;
  const int n = t.n_steps;
  return td_targets(std::span<const double>(&r, 1), column(t.next_state), std::span<const std::uint8_t>(&term, 1),
                    std::span<const int>(&n, 1), online, target, gamma)[0];
}

std::optional<TrainStepResult> train_step(ReplayBuffer& buffer, QNetwork& online, QNetwork& target,
                                          nn::Adam<float>& opt, std::size_t batch_size, double gamma,
                                          const TrainStepOptions& options) {
  if (batch_size == 0 || buffer.size() < batch_size) return std::nullopt;

  TrainStepResult result;
  result.indices = buffer.sample(batch_size);
  const auto& idx = result.indices;
  const std::size_t dim = online.feature_dim();

  const Mat states = gather(dim, batch_size, [&](std::size_t j) -> const std::vector<float>& {
    return buffer.at(idx[j]).state;
  });
  const Mat next_states = gather(dim, batch_size, [&](std::size_t j) -> const std::vector<float>& {
    return buffer.at(idx[j]).next_state;
  });

  std::vector<double> rewards;
  if (options.rewards) {
    rewards = options.rewards(idx);
    if (rewards.size() != batch_size) throw nn::ShapeError("train_step: reward callback returned wrong batch size");
  } else {
    rewards.reserve(batch_size);
    for (std::size_t i : idx) rewards.push_back(buffer.at(i).reward);
  }
  std::vector<std::uint8_t> terminal(batch_size);
  std::vector<int> n_steps(batch_size);
  for (std::size_t j = 0; j < batch_size; ++j) {
    terminal[j] = buffer.at(idx[j]).terminal ? 1 : 0;
    n_steps[j] = buffer.at(idx[j]).n_steps;
  }

  const std::vector<double> targets =
      td_targets(rewards, next_states, terminal, n_steps, online, target, gamma, options.bootstrap, options.bootstrap);

  online.zero_grad();
  const Mat q = online.q_values(states, options.online);
  Mat grad = Mat::Zero(q.rows(), q.cols());
  double loss = 0.0;
  for (std::size_t j = 0; j < batch_size; ++j) {
    const auto a = static_cast<nn::Index>(buffer.at(idx[j]).action);
    const auto col = static_cast<nn::Index>(j);
    const double diff = static_cast<double>(q(a, col)) - targets[j];
    loss += diff * diff;
    grad(a, col) = static_cast<float>(2.0 * diff / static_cast<double>(batch_size));
  }
  online.backward(grad);
  opt.step(online.params());
  result.loss = loss / static_cast<double>(batch_size);
  return result;
}

TargetSync::TargetSync(long interval) : interval_(interval) {
  if (interval <= 0) throw std::invalid_argument("TargetSync: interval must be positive");
}

bool TargetSync::tick(QNetwork& online, QNetwork& target) {
  ++count_;
  if (count_ % interval_ != 0) return false;
  target.copy_from(online);
  return true;
}

// ---------------------------------------------------------------------------
// Imitation

std::vector<Demonstration> collect_demonstrations(const env::EnvConfig& cfg, env::ScenarioKind kind, int episodes,
                                                  std::uint64_t seed) {
  const env::RobotPolicy policy = env::discrete_orca_policy(cfg);
  std::vector<Demonstration> demos;
  for (int e = 0; e < episodes; ++e) {
    const env::EpisodeRecord rec =
        env::run_episode(policy, kind, cfg, derive_seed(seed, SeedStream::demonstrations, static_cast<std::uint64_t>(e)));
    std::vector<double> returns(rec.steps.size());
    double g = 0.0;
    for (std::size_t t = rec.steps.size(); t-- > 0;) {
      g = rec.steps[t].reward + cfg.gamma * g;
      returns[t] = g;
    }
    for (std::size_t t = 0; t < rec.steps.size(); ++t) {
      demos.push_back({env::encode_state(rec.steps[t].state), rec.steps[t].action_index, returns[t]});
    }
  }
  return demos;
}

void il_pretrain(std::span<const Demonstration> demos, QNetwork& net, int epochs, double learning_rate,
                 std::size_t batch_size, std::uint64_t seed) {
  if (demos.empty()) throw std::invalid_argument("il_pretrain: empty demonstration set");
  if (epochs <= 0) return;
  if (batch_size == 0) throw std::invalid_argument("il_pretrain: batch size must be positive");

  nn::Adam<float> opt(learning_rate);
  Rng rng(seed);
  std::vector<std::size_t> order(demos.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t dim = net.feature_dim();

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t count = std::min(batch_size, order.size() - start);
      const Mat states = gather(dim, count, [&](std::size_t j) -> const std::vector<float>& {
        return demos[order[start + j]].state;
      });
      net.zero_grad();
      const Mat q = net.q_values(states);
      Mat grad = Mat::Zero(q.rows(), q.cols());
      for (std::size_t j = 0; j < count; ++j) {
        const Demonstration& d = demos[order[start + j]];
        const auto a = static_cast<nn::Index>(d.action);
        const auto col = static_cast<nn::Index>(j);
        grad(a, col) = static_cast<float>(2.0 * (static_cast<double>(q(a, col)) - d.value) / static_cast<double>(count));
      }
      net.backward(grad);
      opt.step(net.params());
    }
  }
}

}  // namespace crowdnav::rl
