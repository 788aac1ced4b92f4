#pragma once

// Small feed-forward network engine: dense, noisy-dense (factorized Gaussian),
// dropout and ReLU layers with exact reverse-mode gradients, an Adam
// optimizer, and a versioned little-endian weight format.
//
// Activations are column-major batches: one column per sample.

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "crowdnav/random.hpp"

namespace crowdnav::nn {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

enum class Mode { eval, train };
enum class NoiseMode { zero, frozen, sampled };

struct ForwardOptions {
  Mode mode = Mode::eval;
  NoiseMode noise = NoiseMode::zero;
  bool reuse_masks = false;  // replay the dropout masks of the previous train-mode pass
  Rng* rng = nullptr;        // required for sampled noise and fresh dropout masks
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
struct ParamView {
  T* value;
  T* grad;
  Index size;
};

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string descriptor() const = 0;
  virtual Index in_dim() const = 0;
  virtual Index out_dim() const = 0;
  virtual Matrix<T> forward(const Matrix<T>& x, const ForwardOptions& opt) = 0;
  virtual Matrix<T> backward(const Matrix<T>& grad_out) = 0;
  virtual std::vector<ParamView<T>> params() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual void resample_noise(Rng&) {}
  virtual void set_dropout_rate(double) {}

 protected:
  void require_cache(bool cached) const {
    if (!cached) throw std::logic_error("backward called without a cached forward pass");
  }
};

namespace detail {

template <class T>
void uniform_fill(Matrix<T>& m, T bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>(dist(rng));
}

template <class T>
void uniform_fill(Vector<T>& v, T bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  for (Index i = 0; i < v.size(); ++i) v(i) = static_cast<T>(dist(rng));
}

}  // namespace detail

template <class T>
class Dense final : public Layer<T> {
 public:
  Dense(Index in, Index out) : weight_(Matrix<T>::Zero(out, in)), bias_(Vector<T>::Zero(out)) { zero_grad_storage(); }

  Dense(Index in, Index out, Rng& rng) : Dense(in, out) {
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
    detail::uniform_fill(weight_, bound, rng);
    detail::uniform_fill(bias_, bound, rng);
  }

  std::string descriptor() const override {
    return "dense(" + std::to_string(in_dim()) + "," + std::to_string(out_dim()) + ")";
  }
  Index in_dim() const override { return weight_.cols(); }
  Index out_dim() const override { return weight_.rows(); }

  Matrix<T> forward(const Matrix<T>& x, const ForwardOptions&) override {
    if (x.rows() != in_dim()) throw ShapeError("dense: input has " + std::to_string(x.rows()) + " rows, expected " +
                                               std::to_string(in_dim()));
    input_ = x;
    cached_ = true;
    return (weight_ * x).colwise() + bias_;
  }

  Matrix<T> backward(const Matrix<T>& g) override {
    this->require_cache(cached_);
    grad_weight_.noalias() += g * input_.transpose();
    grad_bias_ += g.rowwise().sum();
    return weight_.transpose() * g;
  }

  std::vector<ParamView<T>> params() override {
    return {{weight_.data(), grad_weight_.data(), weight_.size()}, {bias_.data(), grad_bias_.data(), bias_.size()}};
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }

  Matrix<T>& weight() { return weight_; }
  Vector<T>& bias() { return bias_; }

 private:
  void zero_grad_storage() {
    grad_weight_ = Matrix<T>::Zero(weight_.rows(), weight_.cols());
    grad_bias_ = Vector<T>::Zero(bias_.size());
  }

  Matrix<T> weight_;
  Vector<T> bias_;
  Matrix<T> grad_weight_;
  Vector<T> grad_bias_;
  Matrix<T> input_;
  bool cached_ = false;
};

/// Linear layer with learnable factorized Gaussian parameter noise:
/// W = mu_w + sigma_w * (eps_out eps_in^T), b = mu_b + sigma_b * eps_out.
template <class T>
class NoisyDense final : public Layer<T> {
 public:
  NoisyDense(Index in, Index out)
      : mu_w_(Matrix<T>::Zero(out, in)),
        sigma_w_(Matrix<T>::Zero(out, in)),
        mu_b_(Vector<T>::Zero(out)),
        sigma_b_(Vector<T>::Zero(out)),
        eps_in_(Vector<T>::Zero(in)),
        eps_out_(Vector<T>::Zero(out)) {
    g_mu_w_ = Matrix<T>::Zero(out, in);
    g_sigma_w_ = Matrix<T>::Zero(out, in);
    g_mu_b_ = Vector<T>::Zero(out);
    g_sigma_b_ = Vector<T>::Zero(out);
  }

  NoisyDense(Index in, Index out, Rng& rng) : NoisyDense(in, out) {
    const double fan = std::sqrt(static_cast<double>(in));
    detail::uniform_fill(mu_w_, static_cast<T>(1.0 / fan), rng);
    detail::uniform_fill(mu_b_, static_cast<T>(1.0 / fan), rng);
    sigma_w_.setConstant(static_cast<T>(0.5 / fan));
    sigma_b_.setConstant(static_cast<T>(0.5 / fan));
  }

  std::string descriptor() const override {
    return "noisy(" + std::to_string(in_dim()) + "," + std::to_string(out_dim()) + ")";
  }
  Index in_dim() const override { return mu_w_.cols(); }
  Index out_dim() const override { return mu_w_.rows(); }

  void resample_noise(Rng& rng) override {
    std::normal_distribution<double> normal(0.0, 1.0);
    auto scaled = [&] {
      const double x = normal(rng);
      return static_cast<T>((x < 0.0 ? -1.0 : 1.0) * std::sqrt(std::abs(x)));
    };
    for (Index i = 0; i < eps_in_.size(); ++i) eps_in_(i) = scaled();
    for (Index i = 0; i < eps_out_.size(); ++i) eps_out_(i) = scaled();
  }

  Matrix<T> forward(const Matrix<T>& x, const ForwardOptions& opt) override {
    if (x.rows() != in_dim()) throw ShapeError("noisy: input has " + std::to_string(x.rows()) + " rows, expected " +
                                               std::to_string(in_dim()));
    if (opt.noise == NoiseMode::sampled) {
      if (opt.rng == nullptr) throw std::invalid_argument("noisy: sampled noise requires an rng");
      resample_noise(*opt.rng);
    }
    input_ = x;
    cached_ = true;
    noise_active_ = opt.noise != NoiseMode::zero;
    if (!noise_active_) return (mu_w_ * x).colwise() + mu_b_;
    const Matrix<T> w = effective_weight();
    const Vector<T> b = mu_b_ + sigma_b_.cwiseProduct(eps_out_);
    return (w * x).colwise() + b;
  }

  Matrix<T> backward(const Matrix<T>& g) override {
    this->require_cache(cached_);
    const Matrix<T> outer = g * input_.transpose();
    g_mu_w_ += outer;
    g_mu_b_ += g.rowwise().sum();
    if (!noise_active_) return mu_w_.transpose() * g;
    g_sigma_w_ += outer.cwiseProduct(eps_out_ * eps_in_.transpose());
    g_sigma_b_ += g.rowwise().sum().cwiseProduct(eps_out_);
    return effective_weight().transpose() * g;
  }

  std::vector<ParamView<T>> params() override {
    return {{mu_w_.data(), g_mu_w_.data(), mu_w_.size()},
            {sigma_w_.data(), g_sigma_w_.data(), sigma_w_.size()},
            {mu_b_.data(), g_mu_b_.data(), mu_b_.size()},
            {sigma_b_.data(), g_sigma_b_.data(), sigma_b_.size()}};
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<NoisyDense>(*this); }

  Matrix<T>& mu_weight() { return mu_w_; }
  Matrix<T>& sigma_weight() { return sigma_w_; }
  Vector<T>& mu_bias() { return mu_b_; }
  Vector<T>& sigma_bias() { return sigma_b_; }

 private:
  Matrix<T> effective_weight() const { return mu_w_ + sigma_w_.cwiseProduct(eps_out_ * eps_in_.transpose()); }

  Matrix<T> mu_w_, sigma_w_;
  Vector<T> mu_b_, sigma_b_;
  Vector<T> eps_in_, eps_out_;
  Matrix<T> g_mu_w_, g_sigma_w_;
  Vector<T> g_mu_b_, g_sigma_b_;
  Matrix<T> input_;
  bool cached_ = false;
  bool noise_active_ = false;
};

/// Inverted dropout: kept units are scaled by 1/(1 - rate) in train mode.
template <class T>
class Dropout final : public Layer<T> {
 public:
  Dropout(Index dim, double rate) : dim_(dim) { set_dropout_rate(rate); }

  std::string descriptor() const override { return "dropout(" + std::to_string(dim_) + ")"; }
  Index in_dim() const override { return dim_; }
  Index out_dim() const override { return dim_; }

  void set_dropout_rate(double rate) override {
    if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1]");
    rate_ = rate;
  }
  double rate() const { return rate_; }

  Matrix<T> forward(const Matrix<T>& x, const ForwardOptions& opt) override {
    if (x.rows() != dim_) throw ShapeError("dropout: dimension mismatch");
    cached_ = true;
    masked_ = opt.mode == Mode::train;
    if (!masked_) return x;
    if (opt.reuse_masks) {
      if (mask_.rows() != x.rows() || mask_.cols() != x.cols()) throw ShapeError("dropout: stored mask shape differs");
    } else {
      if (opt.rng == nullptr && rate_ > 0.0) throw std::invalid_argument("dropout: train mode requires an rng");
      mask_.resize(x.rows(), x.cols());
      if (rate_ >= 1.0) {
        mask_.setZero();
      } else if (rate_ <= 0.0) {
        mask_.setOnes();
      } else {
        std::bernoulli_distribution keep(1.0 - rate_);
        const T scale = static_cast<T>(1.0 / (1.0 - rate_));
        for (Index j = 0; j < mask_.cols(); ++j)
          for (Index i = 0; i < mask_.rows(); ++i) mask_(i, j) = keep(*opt.rng) ? scale : T(0);
      }
    }
    return x.cwiseProduct(mask_);
  }

  Matrix<T> backward(const Matrix<T>& g) override {
    this->require_cache(cached_);
    return masked_ ? Matrix<T>(g.cwiseProduct(mask_)) : g;
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dropout>(*this); }

 private:
  Index dim_;
  double rate_ = 0.0;
  Matrix<T> mask_;
  bool cached_ = false;
  bool masked_ = false;
};

template <class T>
class Relu final : public Layer<T> {
 public:
  explicit Relu(Index dim) : dim_(dim) {}

  std::string descriptor() const override { return "relu(" + std::to_string(dim_) + ")"; }
  Index in_dim() const override { return dim_; }
  Index out_dim() const override { return dim_; }

  Matrix<T> forward(const Matrix<T>& x, const ForwardOptions&) override {
    if (x.rows() != dim_) throw ShapeError("relu: dimension mismatch");
    input_ = x;
    cached_ = true;
    return x.cwiseMax(T(0));
  }

  Matrix<T> backward(const Matrix<T>& g) override {
    this->require_cache(cached_);
    return g.cwiseProduct((input_.array() > T(0)).matrix().template cast<T>());
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Relu>(*this); }

 private:
  Index dim_;
  Matrix<T> input_;
  bool cached_ = false;
};

template <class T>
class Network {
 public:
  Network() = default;
  Network(const Network& other) { *this = other; }
  Network& operator=(const Network& other) {
    if (this == &other) return *this;
    layers_.clear();
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
    has_forward_ = other.has_forward_;
    return *this;
  }
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  void add(std::unique_ptr<Layer<T>> layer) {
    if (!layers_.empty() && layers_.back()->out_dim() != layer->in_dim()) {
      throw ShapeError("network: layer " + layer->descriptor() + " does not follow " + layers_.back()->descriptor());
    }
    layers_.push_back(std::move(layer));
  }

  Index input_dim() const { return layers_.empty() ? 0 : layers_.front()->in_dim(); }
  Index output_dim() const { return layers_.empty() ? 0 : layers_.back()->out_dim(); }
  std::size_t num_layers() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }

  std::string descriptor() const {
    std::string out;
    for (const auto& l : layers_) {
      if (!out.empty()) out += ';';
      out += l->descriptor();
    }
    return out;
  }

  Matrix<T> forward(const Matrix<T>& x, const ForwardOptions& opt = {}) {
    if (layers_.empty()) throw std::logic_error("network: no layers");
    if (x.rows() != input_dim()) {
      throw ShapeError("network: input has " + std::to_string(x.rows()) + " rows, expected " +
                       std::to_string(input_dim()));
    }
    Matrix<T> h = x;
    for (auto& l : layers_) h = l->forward(h, opt);
    has_forward_ = true;
    return h;
  }

  /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
  Matrix<T> backward(const Matrix<T>& grad_out) {
    if (!has_forward_) throw std::logic_error("network: backward called without a cached forward pass");
    if (grad_out.rows() != output_dim()) throw ShapeError("network: gradient shape does not match output");
    Matrix<T> g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<ParamView<T>> params() {
    std::vector<ParamView<T>> out;
    for (auto& l : layers_) {
      auto p = l->params();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  Index num_params() {
    Index n = 0;
    for (const auto& p : params()) n += p.size;
    return n;
  }

  void zero_grad() {
    for (auto& p : params()) std::fill(p.grad, p.grad + p.size, T(0));
  }

  void resample_noise(Rng& rng) {
    for (auto& l : layers_) l->resample_noise(rng);
  }

  void set_dropout_rate(double rate) {
    for (auto& l : layers_) l->set_dropout_rate(rate);
  }

  /// Copies parameter values from a network with the same descriptor.
  void copy_params_from(Network& other) {
    if (descriptor() != other.descriptor()) throw ShapeError("network: copy between different architectures");
    auto dst = params();
    auto src = other.params();
    for (std::size_t i = 0; i < dst.size(); ++i) std::copy(src[i].value, src[i].value + src[i].size, dst[i].value);
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  bool has_forward_ = false;
};

struct MlpOptions {
  bool noisy = false;
  bool dropout = false;
  double dropout_rate = 0.0;
};

/// Linear/ReLU stack; the output layer is linear. Dropout (when enabled)
/// follows every hidden activation.
template <class T>
Network<T> make_mlp(Index in, const std::vector<int>& hidden, Index out, Rng& rng, const MlpOptions& opt = {}) {
  Network<T> net;
  Index prev = in;
  auto linear = [&](Index a, Index b) -> std::unique_ptr<Layer<T>> {
    if (opt.noisy) return std::make_unique<NoisyDense<T>>(a, b, rng);
    return std::make_unique<Dense<T>>(a, b, rng);
  };
  for (int h : hidden) {
    net.add(linear(prev, h));
    net.add(std::make_unique<Relu<T>>(h));
    if (opt.dropout) net.add(std::make_unique<Dropout<T>>(h, opt.dropout_rate));
    prev = h;
  }
  net.add(linear(prev, out));
  return net;
}

// ---------------------------------------------------------------------------
// Losses. Each returns the mean loss and writes d(loss)/d(prediction).

template <class T>
double mse_loss(const Matrix<T>& pred, const Matrix<T>& target, Matrix<T>& grad) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("mse: shape mismatch");
  const Matrix<T> diff = pred - target;
  const double n = static_cast<double>(diff.size());
  grad = diff * static_cast<T>(2.0 / n);
  return static_cast<double>(diff.squaredNorm()) / n;
}

/// Softmax cross-entropy over the rows of `logits`, averaged over columns.
template <class T>
double cross_entropy_loss(const Matrix<T>& logits, std::span<const std::size_t> labels, Matrix<T>& grad) {
  if (static_cast<std::size_t>(logits.cols()) != labels.size()) throw ShapeError("cross_entropy: label count");
  const Index batch = logits.cols();
  grad.resize(logits.rows(), batch);
  double loss = 0.0;
  for (Index j = 0; j < batch; ++j) {
    const T max_logit = logits.col(j).maxCoeff();
    Vector<T> e = (logits.col(j).array() - max_logit).exp().matrix();
    const T sum = e.sum();
    grad.col(j) = e / sum;
    loss -= std::log(static_cast<double>(grad(static_cast<Index>(labels[j]), j)));
    grad(static_cast<Index>(labels[j]), j) -= T(1);
  }
  grad /= static_cast<T>(batch);
  return loss / static_cast<double>(batch);
}

// ---------------------------------------------------------------------------
// Optimizer

template <class T>
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  long steps() const { return t_; }

  void step(std::vector<ParamView<T>> params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(Vector<T>::Zero(p.size));
        v_.push_back(Vector<T>::Zero(p.size));
      }
    }
    if (m_.size() != params.size()) throw ShapeError("adam: parameter layout changed");
    ++t_;
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T c1 = static_cast<T>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
    const T c2 = static_cast<T>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
    const T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (m_[k].size() != params[k].size) throw ShapeError("adam: parameter shape changed");
      Eigen::Map<Vector<T>> w(params[k].value, params[k].size);
      Eigen::Map<const Vector<T>> g(params[k].grad, params[k].size);
      m_[k] = b1 * m_[k] + (T(1) - b1) * g;
      v_[k] = b2 * v_[k] + (T(1) - b2) * g.cwiseProduct(g);
      w.array() -= lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps);
    }
  }

  void step(Network<T>& net) { step(net.params()); }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Vector<T>> m_, v_;
};

// ---------------------------------------------------------------------------
// Weight serialization
//
//   bytes 0-3   magic "CNNW"
//   bytes 4-7   format version (u32 LE)
//   bytes 8-11  descriptor length L (u32 LE)
//   next L      descriptor text: name=layer;layer|name=...
//   next 8      parameter count P (u64 LE)
//   next 4P     parameters as f32 LE, layer order, each layer's tensors in
//               declaration order (column-major)

inline constexpr char kWeightMagic[4] = {'C', 'N', 'N', 'W'};
inline constexpr std::uint32_t kWeightVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw CheckpointError("weights: truncated blob");
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct LayerSpec {
  std::string kind;
  std::vector<Index> args;
};

inline LayerSpec parse_layer(const std::string& text) {
  const auto open = text.find('(');
  const auto close = text.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close < open) {
    throw CheckpointError("weights: malformed layer descriptor '" + text + "'");
  }
  LayerSpec spec{text.substr(0, open), {}};
  std::stringstream ss(text.substr(open + 1, close - open - 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      spec.args.push_back(static_cast<Index>(std::stoll(item)));
    } catch (const std::exception&) {
      throw CheckpointError("weights: malformed layer argument '" + item + "'");
    }
  }
  return spec;
}

template <class T>
Network<T> build_from_descriptor(const std::string& desc) {
  Network<T> net;
  std::stringstream ss(desc);
  std::string item;
  auto arity = [](const LayerSpec& s, std::size_t n) {
    if (s.args.size() != n) throw CheckpointError("weights: wrong arity for " + s.kind);
    for (Index a : s.args)
      if (a <= 0) throw CheckpointError("weights: nonpositive dimension in descriptor");
  };
  try {
    while (std::getline(ss, item, ';')) {
      const LayerSpec s = parse_layer(item);
      if (s.kind == "dense") {
        arity(s, 2);
        net.add(std::make_unique<Dense<T>>(s.args[0], s.args[1]));
      } else if (s.kind == "noisy") {
        arity(s, 2);
        net.add(std::make_unique<NoisyDense<T>>(s.args[0], s.args[1]));
      } else if (s.kind == "relu") {
        arity(s, 1);
        net.add(std::make_unique<Relu<T>>(s.args[0]));
      } else if (s.kind == "dropout") {
        arity(s, 1);
        net.add(std::make_unique<Dropout<T>>(s.args[0], 0.0));
      } else {
        throw CheckpointError("weights: unknown layer kind '" + s.kind + "'");
      }
    }
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("weights: inconsistent descriptor: ") + e.what());
  }
  if (net.num_layers() == 0) throw CheckpointError("weights: empty network descriptor");
  return net;
}

}  // namespace detail

template <class T>
struct NamedNetwork {
  std::string name;
  Network<T>* net;
};

template <class T>
std::string bundle_descriptor(std::span<const NamedNetwork<T>> nets) {
  std::string desc;
  for (const auto& n : nets) {
    if (!desc.empty()) desc += '|';
    desc += n.name + "=" + n.net->descriptor();
  }
  return desc;
}

template <class T>
std::vector<std::uint8_t> save_weights(std::span<const NamedNetwork<T>> nets) {
  std::vector<std::uint8_t> out(std::begin(kWeightMagic), std::end(kWeightMagic));
  detail::put_u32(out, kWeightVersion);
  const std::string desc = bundle_descriptor(nets);
  detail::put_u32(out, static_cast<std::uint32_t>(desc.size()));
  out.insert(out.end(), desc.begin(), desc.end());
  std::uint64_t count = 0;
  for (const auto& n : nets) count += static_cast<std::uint64_t>(n.net->num_params());
  detail::put_u64(out, count);
  for (const auto& n : nets) {
    for (const auto& p : n.net->params()) {
      for (Index i = 0; i < p.size; ++i) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(p.value[i])));
    }
  }
  return out;
}

template <class T>
std::vector<std::uint8_t> save_weights(Network<T>& net) {
  const NamedNetwork<T> one{"net", &net};
  return save_weights<T>(std::span<const NamedNetwork<T>>(&one, 1));
}

namespace detail {

struct BlobHeader {
  std::string descriptor;
  std::uint64_t param_count = 0;
};

inline BlobHeader read_header(Reader& r) {
  auto magic = r.take(4);
  if (std::memcmp(magic.data(), kWeightMagic, 4) != 0) throw CheckpointError("weights: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kWeightVersion) throw CheckpointError("weights: unsupported version " + std::to_string(version));
  const std::uint32_t len = r.u32();
  auto d = r.take(len);
  BlobHeader h;
  h.descriptor.assign(d.begin(), d.end());
  h.param_count = r.u64();
  return h;
}

template <class T>
void read_params(Reader& r, std::span<const NamedNetwork<T>> nets, std::uint64_t expected) {
  std::uint64_t count = 0;
  for (const auto& n : nets) count += static_cast<std::uint64_t>(n.net->num_params());
  if (count != expected) throw CheckpointError("weights: parameter count does not match descriptor");
  for (const auto& n : nets) {
    for (const auto& p : n.net->params()) {
      for (Index i = 0; i < p.size; ++i) p.value[i] = static_cast<T>(r.f32());
    }
  }
  if (!r.at_end()) throw CheckpointError("weights: trailing bytes after parameters");
}

}  // namespace detail

/// Loads into existing networks; the stored descriptor must match exactly.
/// On error the targets are left untouched.
template <class T>
void load_weights_into(std::span<const NamedNetwork<T>> nets, std::span<const std::uint8_t> blob) {
  detail::Reader r(blob);
  const auto header = detail::read_header(r);
  const std::string expected = bundle_descriptor(nets);
  if (header.descriptor != expected) {
    throw CheckpointError("weights: architecture mismatch (stored '" + header.descriptor + "', expected '" + expected +
                          "')");
  }
  std::vector<Network<T>> staging;
  staging.reserve(nets.size());
  std::vector<NamedNetwork<T>> staged;
  for (const auto& n : nets) staging.push_back(*n.net);
  for (std::size_t i = 0; i < nets.size(); ++i) staged.push_back({nets[i].name, &staging[i]});
  detail::read_params<T>(r, staged, header.param_count);
  for (std::size_t i = 0; i < nets.size(); ++i) *nets[i].net = std::move(staging[i]);
}

template <class T>
void load_weights_into(Network<T>& net, std::span<const std::uint8_t> blob) {
  const NamedNetwork<T> one{"net", &net};
  load_weights_into<T>(std::span<const NamedNetwork<T>>(&one, 1), blob);
}

/// Rebuilds a single network purely from a blob.
template <class T>
Network<T> load_weights(std::span<const std::uint8_t> blob) {
  detail::Reader r(blob);
  const auto header = detail::read_header(r);
  const std::string prefix = "net=";
  if (header.descriptor.rfind(prefix, 0) != 0 || header.descriptor.find('|') != std::string::npos) {
    throw CheckpointError("weights: blob does not hold a single network");
  }
  Network<T> net = detail::build_from_descriptor<T>(header.descriptor.substr(prefix.size()));
  const NamedNetwork<T> one{"net", &net};
  detail::read_params<T>(r, std::span<const NamedNetwork<T>>(&one, 1), header.param_count);
  return net;
}

}  // namespace crowdnav::nn
