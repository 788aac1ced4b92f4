#include "crowdnav/exploration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace crowdnav::explore {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Mat column(std::span<const float> v) {
  Mat m(static_cast<nn::Index>(v.size()), 1);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

}  // namespace

std::string strategy_name(const Strategy& s) {
  return std::visit(Overloaded{[](const EpsilonGreedy&) { return std::string("epsilon"); },
                               [](const NoisyNets&) { return std::string("noisy"); },
                               [](const DecayingDropout&) { return std::string("dropout"); },
                               [](const IcmConfig&) { return std::string("icm"); },
                               [](const Re3Config&) { return std::string("re3"); }},
                    s);
}

double linear_decay(double start, double end, int decay_episodes, long episode) {
  if (episode <= 0) return start;
  if (decay_episodes <= 0 || episode >= decay_episodes) return end;
  const double frac = static_cast<double>(episode) / static_cast<double>(decay_episodes);
  return start + (end - start) * frac;
}

double epsilon_at(const Strategy& s, long episode) {
  return std::visit(Overloaded{[&](const EpsilonGreedy& e) { return linear_decay(e.start, e.end, e.decay_episodes, episode); },
                               [](const IcmConfig& c) { return c.epsilon; },
                               [](const Re3Config& c) { return c.epsilon; },
                               [](const auto&) { return 0.0; }},
                    s);
}

double dropout_rate(const DecayingDropout& d, long episode) {
  return linear_decay(d.rate_start, d.rate_end, d.decay_episodes, episode);
}

double dropout_rate_at(const Strategy& s, long episode) {
  if (const auto* d = std::get_if<DecayingDropout>(&s)) return dropout_rate(*d, episode);
  return 0.0;
}

double beta(const Strategy& s) {
  if (const auto* c = std::get_if<IcmConfig>(&s)) return c->beta;
  if (const auto* c = std::get_if<Re3Config>(&s)) return c->beta;
  return 0.0;
}

nn::ForwardOptions acting_options(const Strategy& s, Rng& rng) {
  nn::ForwardOptions opt;
  opt.rng = &rng;
  if (std::holds_alternative<NoisyNets>(s)) opt.noise = nn::NoiseMode::sampled;
  if (std::holds_alternative<DecayingDropout>(s)) opt.mode = nn::Mode::train;
  return opt;
}

nn::ForwardOptions training_options(const Strategy& s, Rng& rng) { return acting_options(s, rng); }

std::size_t select_action(const Strategy& s, std::span<const float> q, long episode, Rng& rng) {
  const double eps = epsilon_at(s, episode);
  if (eps > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < eps) {
    return std::uniform_int_distribution<std::size_t>(0, q.size() - 1)(rng);
  }
  return rl::greedy_action(q);
}

double augment_reward(const Strategy& s, double r_ex, double r_in) { return r_ex + beta(s) * r_in; }

double embedding_mse(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw nn::ShapeError("embedding_mse: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// ICM

IcmModule::IcmModule(std::size_t feature_dim, std::size_t num_actions, Rng& init, double learning_rate,
                     double inverse_weight)
    : feature_dim_(feature_dim),
      num_actions_(num_actions),
      inverse_weight_(inverse_weight),
      opt_encoder_(learning_rate),
      opt_inverse_(learning_rate),
      opt_forward_(learning_rate) {
  set_inverse_weight(inverse_weight);
  encoder_ = nn::make_mlp<float>(static_cast<nn::Index>(feature_dim), {256}, kEmbedding, init);
  inverse_ = nn::make_mlp<float>(2 * kEmbedding, {256, 128}, static_cast<nn::Index>(num_actions), init);
  forward_ = nn::make_mlp<float>(kEmbedding + static_cast<nn::Index>(num_actions), {256, 128}, kEmbedding, init);
}

void IcmModule::set_inverse_weight(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("ICM inverse weight must lie in [0, 1]");
  inverse_weight_ = lambda;
}

Mat IcmModule::embed(const Mat& states) { return encoder_.forward(states); }

Mat IcmModule::forward_input(const Mat& embeddings, std::span<const std::size_t> actions) const {
  if (static_cast<std::size_t>(embeddings.cols()) != actions.size()) throw nn::ShapeError("ICM: action count");
  Mat in = Mat::Zero(kEmbedding + static_cast<nn::Index>(num_actions_), embeddings.cols());
  in.topRows(kEmbedding) = embeddings;
  for (std::size_t j = 0; j < actions.size(); ++j) {
    if (actions[j] >= num_actions_) throw std::out_of_range("ICM: action index");
    in(kEmbedding + static_cast<nn::Index>(actions[j]), static_cast<nn::Index>(j)) = 1.0f;
  }
  return in;
}

Mat IcmModule::predict_next(const Mat& embeddings, std::span<const std::size_t> actions) {
  return forward_.forward(forward_input(embeddings, actions));
}

std::vector<double> IcmModule::intrinsic_batch(const Mat& states, std::span<const std::size_t> actions,
                                               const Mat& next_states) {
  const Mat phi = embed(states);
  const Mat phi_next = embed(next_states);
  const Mat pred = predict_next(phi, actions);
  std::vector<double> out(static_cast<std::size_t>(pred.cols()));
  for (nn::Index j = 0; j < pred.cols(); ++j) {
    out[static_cast<std::size_t>(j)] = embedding_mse(std::span<const float>(pred.col(j).data(), kEmbedding),
                                                     std::span<const float>(phi_next.col(j).data(), kEmbedding));
  }
  return out;
}

double IcmModule::intrinsic(std::span<const float> s, std::size_t action, std::span<const float> s_next) {
  return intrinsic_batch(column(s), std::span<const std::size_t>(&action, 1), column(s_next))[0];
}

std::pair<double, double> IcmModule::update(const Mat& states, std::span<const std::size_t> actions,
                                            const Mat& next_states) {
  const nn::Index batch = states.cols();
  if (batch == 0 || next_states.cols() != batch || static_cast<std::size_t>(batch) != actions.size()) {
    throw nn::ShapeError("ICM update: batch shapes disagree");
  }
  encoder_.zero_grad();
  inverse_.zero_grad();
  forward_.zero_grad();

  // One encoder pass over [s | s'] keeps a single activation cache.
  Mat both(states.rows(), 2 * batch);
  both.leftCols(batch) = states;
  both.rightCols(batch) = next_states;
  const Mat phi_all = encoder_.forward(both);
  const Mat phi = phi_all.leftCols(batch);
  const Mat phi_next = phi_all.rightCols(batch);

  Mat inv_in(2 * kEmbedding, batch);
  inv_in.topRows(kEmbedding) = phi;
  inv_in.bottomRows(kEmbedding) = phi_next;
  const Mat logits = inverse_.forward(inv_in);
  Mat g_logits;
  const double inv_loss = nn::cross_entropy_loss<float>(logits, actions, g_logits);

  const Mat pred = forward_.forward(forward_input(phi, actions));
  Mat g_pred;
  const double fwd_loss = nn::mse_loss<float>(pred, phi_next, g_pred);

  const auto lambda = static_cast<float>(inverse_weight_);
  g_logits *= lambda;
  g_pred *= 1.0f - lambda;

  Mat g_phi_all = Mat::Zero(kEmbedding, 2 * batch);
  const Mat g_inv_in = inverse_.backward(g_logits);
  g_phi_all.leftCols(batch) += g_inv_in.topRows(kEmbedding);
  g_phi_all.rightCols(batch) += g_inv_in.bottomRows(kEmbedding);
  const Mat g_fwd_in = forward_.backward(g_pred);
  g_phi_all.leftCols(batch) += g_fwd_in.topRows(kEmbedding);
  g_phi_all.rightCols(batch) -= g_pred;  // d/d(phi') of the forward MSE
  encoder_.backward(g_phi_all);

  opt_encoder_.step(encoder_);
  if (inverse_weight_ > 0.0) opt_inverse_.step(inverse_);
  if (inverse_weight_ < 1.0) opt_forward_.step(forward_);
  return {inv_loss, fwd_loss};
}

std::vector<std::size_t> IcmModule::predict_actions(const Mat& states, const Mat& next_states) {
  Mat inv_in(2 * kEmbedding, states.cols());
  inv_in.topRows(kEmbedding) = embed(states);
  inv_in.bottomRows(kEmbedding) = embed(next_states);
  const Mat logits = inverse_.forward(inv_in);
  std::vector<std::size_t> out(static_cast<std::size_t>(logits.cols()));
  for (nn::Index j = 0; j < logits.cols(); ++j) {
    out[static_cast<std::size_t>(j)] = rl::greedy_action(std::span<const float>(logits.col(j).data(), logits.rows()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// RE3

Re3Module::Re3Module(std::size_t feature_dim, Rng& init, int k, std::size_t capacity, bool average_knn)
    : feature_dim_(feature_dim), k_(k), average_(average_knn) {
  if (k <= 0) throw std::invalid_argument("RE3: k must be positive");
  if (capacity == 0) throw std::invalid_argument("RE3: store capacity must be positive");
  encoder_ = nn::make_mlp<float>(static_cast<nn::Index>(feature_dim), {256}, kEmbedding, init);
  store_ = Eigen::MatrixXf::Zero(kEmbedding, static_cast<Eigen::Index>(capacity));
  store_sq_norm_ = Eigen::VectorXf::Zero(static_cast<Eigen::Index>(capacity));
}

std::vector<float> Re3Module::embed(std::span<const float> s) {
  const Mat e = encoder_.forward(column(s));
  return {e.data(), e.data() + e.size()};
}

Mat Re3Module::embed_batch(const Mat& states) { return encoder_.forward(states); }

double Re3Module::reward_from_sorted(const std::vector<double>& sorted) const {
  if (sorted.empty()) return 0.0;
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k_), sorted.size());
  double d = sorted[kk - 1];
  if (average_) d = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(kk), 0.0) / kk;
  return std::log(d + 1.0);
}

double Re3Module::query_embedding(std::span<const float> e) const {
  if (count_ == 0) return 0.0;
  if (e.size() != static_cast<std::size_t>(kEmbedding)) throw nn::ShapeError("RE3: embedding size");
  const Eigen::Map<const Eigen::VectorXf> q(e.data(), kEmbedding);
  std::vector<double> d(count_);
  for (std::size_t i = 0; i < count_; ++i) {
    d[i] = static_cast<double>((store_.col(static_cast<Eigen::Index>(i)) - q).norm());
  }
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k_), count_);
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk), d.end());
  d.resize(kk);
  return reward_from_sorted(d);
}

double Re3Module::query(std::span<const float> s) {
  const std::vector<float> e = embed(s);
  return query_embedding(e);
}

std::vector<double> Re3Module::query_batch(const Mat& states) {
  const Mat emb = embed_batch(states);
  const auto batch = static_cast<std::size_t>(emb.cols());
  std::vector<double> out(batch, 0.0);
  if (count_ == 0) return out;

  // Squared distances by expansion pick candidates; the final k distances are
  // recomputed exactly.
  const auto n = static_cast<Eigen::Index>(count_);
  const Eigen::MatrixXf cross = emb.transpose() * store_.leftCols(n);  // batch x n
  const Eigen::VectorXf q_sq = emb.colwise().squaredNorm().transpose();
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k_), count_);
  const std::size_t candidates = std::min<std::size_t>(count_, kk + 8);

  std::vector<std::size_t> idx(count_);
  std::vector<float> approx(count_);
  for (std::size_t j = 0; j < batch; ++j) {
    const auto row = static_cast<Eigen::Index>(j);
    for (std::size_t i = 0; i < count_; ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      approx[i] = q_sq(row) + store_sq_norm_(c) - 2.0f * cross(row, c);
    }
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(candidates), idx.end(),
                      [&](std::size_t a, std::size_t b) { return approx[a] < approx[b]; });
    std::vector<double> exact(candidates);
    for (std::size_t c = 0; c < candidates; ++c) {
      exact[c] = static_cast<double>((store_.col(static_cast<Eigen::Index>(idx[c])) - emb.col(row)).norm());
    }
    std::sort(exact.begin(), exact.end());
    exact.resize(kk);
    out[j] = reward_from_sorted(exact);
  }
  return out;
}

void Re3Module::insert_embedding(std::span<const float> e) {
  if (e.size() != static_cast<std::size_t>(kEmbedding)) throw nn::ShapeError("RE3: embedding size");
  const auto col = static_cast<Eigen::Index>(head_);
  store_.col(col) = Eigen::Map<const Eigen::VectorXf>(e.data(), kEmbedding);
  store_sq_norm_(col) = store_.col(col).squaredNorm();
  head_ = (head_ + 1) % capacity();
  count_ = std::min(count_ + 1, capacity());
}

double Re3Module::intrinsic(std::span<const float> s) {
  const std::vector<float> e = embed(s);
  const double r = query_embedding(e);
  insert_embedding(e);
  return r;
}

std::vector<std::uint8_t> Re3Module::encoder_blob() { return nn::save_weights(encoder_); }

}  // namespace crowdnav::explore
