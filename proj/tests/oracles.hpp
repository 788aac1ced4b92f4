#pragma once

// Independent reference computations used by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "crowdnav/env.hpp"
#include "crowdnav/nn.hpp"
#include "crowdnav/orca.hpp"

namespace oracle {

// Unicycle transition written out term by term.
struct Pose {
  double x, y, vx, vy, theta;
};

inline Pose unicycle(double x, double y, double theta, double v, double delta, double dt) {
  Pose p{};
  p.vx = v * std::cos(theta);
  p.vy = v * std::sin(theta);
  p.x = x + p.vx * dt;
  p.y = y + p.vy * dt;
  p.theta = std::fmod(theta + delta, 2.0 * M_PI);
  if (p.theta < 0.0) p.theta += 2.0 * M_PI;
  return p;
}

struct GridResult {
  bool feasible = false;
  double x = 0.0, y = 0.0;
  double objective = std::numeric_limits<double>::infinity();  // distance or max violation
};

inline double max_violation(std::span<const crowdnav::orca::HalfPlane> lines, double x, double y) {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& l : lines) {
    // Positive on the right of the directed line.
    const double v = l.direction.x * (l.point.y - y) - l.direction.y * (l.point.x - x);
    worst = std::max(worst, v);
  }
  return lines.empty() ? 0.0 : worst;
}

/// Dense sampling of the speed disc. Returns the feasible sample closest to
/// `pref`, or the sample minimizing the maximum violation when no sample is
/// feasible.
inline GridResult lp_grid(std::span<const crowdnav::orca::HalfPlane> lines, double pref_x, double pref_y, double v_max,
                          int per_axis) {
  GridResult best_feasible;
  GridResult best_violation;
  const double h = 2.0 * v_max / (per_axis - 1);
  for (int i = 0; i < per_axis; ++i) {
    const double x = -v_max + i * h;
    for (int j = 0; j < per_axis; ++j) {
      const double y = -v_max + j * h;
      if (x * x + y * y > v_max * v_max) continue;
      const double viol = max_violation(lines, x, y);
      if (viol <= 0.0) {
        const double d = std::hypot(x - pref_x, y - pref_y);
        if (d < best_feasible.objective) best_feasible = {true, x, y, d};
      } else if (viol < best_violation.objective) {
        best_violation = {false, x, y, viol};
      }
    }
  }
  return best_feasible.feasible ? best_feasible : best_violation;
}

/// Exact closest feasible point by enumerating every place a convex
/// polygon-in-disc optimum can sit: pref itself, projections onto each line or
/// the circle, and the vertices (line/line, line/circle). Not feasible when
/// no candidate satisfies all constraints.
inline GridResult lp_exact(std::span<const crowdnav::orca::HalfPlane> lines, double pref_x, double pref_y,
                           double v_max) {
  std::vector<std::pair<double, double>> cand{{pref_x, pref_y}};
  const double pn = std::hypot(pref_x, pref_y);
  if (pn > 0.0) cand.emplace_back(pref_x * v_max / pn, pref_y * v_max / pn);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& a = lines[i];
    const double dx = a.direction.x, dy = a.direction.y;
    const double t = (pref_x - a.point.x) * dx + (pref_y - a.point.y) * dy;
    cand.emplace_back(a.point.x + t * dx, a.point.y + t * dy);
    // |p + s d|^2 = v_max^2
    const double b = a.point.x * dx + a.point.y * dy;
    const double c = a.point.x * a.point.x + a.point.y * a.point.y - v_max * v_max;
    const double disc = b * b - c;
    if (disc >= 0.0) {
      for (double s : {-b - std::sqrt(disc), -b + std::sqrt(disc)})
        cand.emplace_back(a.point.x + s * dx, a.point.y + s * dy);
    }
    for (std::size_t j = i + 1; j < lines.size(); ++j) {
      const auto& q = lines[j];
      const double det = dx * q.direction.y - dy * q.direction.x;
      if (std::abs(det) < 1e-14) continue;
      const double s = ((q.point.x - a.point.x) * q.direction.y - (q.point.y - a.point.y) * q.direction.x) / det;
      cand.emplace_back(a.point.x + s * dx, a.point.y + s * dy);
    }
  }
  GridResult best;
  for (const auto& [x, y] : cand) {
    if (std::hypot(x, y) > v_max + 1e-12 || max_violation(lines, x, y) > 1e-12) continue;
    const double d = std::hypot(x - pref_x, y - pref_y);
    if (d < best.objective) best = {true, x, y, d};
  }
  return best;
}

/// Central differences of a scalar function of the network parameters.
template <class Loss>
std::vector<double> numeric_gradient(crowdnav::nn::Network<double>& net, Loss&& loss, double h = 1e-5) {
  std::vector<double> out;
  for (auto& p : net.params()) {
    for (crowdnav::nn::Index i = 0; i < p.size; ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = loss();
      p.value[i] = saved - h;
      const double down = loss();
      p.value[i] = saved;
      out.push_back((up - down) / (2.0 * h));
    }
  }
  return out;
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

/// Small random net with every layer kind: dense, relu, dropout, noisy.
inline crowdnav::nn::Network<double> mixed_network(crowdnav::Rng& rng) {
  using namespace crowdnav::nn;
  std::uniform_int_distribution<int> width(3, 7);
  const Index in = width(rng), h1 = width(rng), h2 = width(rng), out = width(rng) - 1;
  Network<double> net;
  net.add(std::make_unique<Dense<double>>(in, h1, rng));
  net.add(std::make_unique<Relu<double>>(h1));
  net.add(std::make_unique<Dropout<double>>(h1, 0.3));
  net.add(std::make_unique<NoisyDense<double>>(h1, h2, rng));
  net.add(std::make_unique<Relu<double>>(h2));
  net.add(std::make_unique<Dense<double>>(h2, out, rng));
  return net;
}

/// Smallest |pre-activation| seen by any ReLU; finite differences are only
/// meaningful away from the kink.
inline double min_relu_margin(crowdnav::nn::Network<double>& net, const crowdnav::nn::Matrix<double>& x,
                              const crowdnav::nn::ForwardOptions& opt) {
  double margin = std::numeric_limits<double>::infinity();
  crowdnav::nn::Matrix<double> h = x;
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    auto& layer = net.layer(i);
    if (dynamic_cast<crowdnav::nn::Relu<double>*>(&layer) != nullptr) margin = std::min(margin, h.cwiseAbs().minCoeff());
    h = layer.forward(h, opt);
  }
  return margin;
}

/// Max relative error between backprop and central differences for a random
/// mixed network under an MSE loss. Noise and dropout masks are drawn once
/// and then held fixed. Returns a negative value when the draw landed too
/// close to a ReLU kink to be checked.
inline double gradient_check(crowdnav::Rng& rng) {
  using namespace crowdnav::nn;
  Network<double> net = mixed_network(rng);
  const Index batch = 3;
  Matrix<double> x(net.input_dim(), batch);
  Matrix<double> y(net.output_dim(), batch);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  for (Index i = 0; i < y.size(); ++i) y.data()[i] = normal(rng);

  ForwardOptions draw{Mode::train, NoiseMode::sampled, false, &rng};
  net.forward(x, draw);
  const ForwardOptions fixed{Mode::train, NoiseMode::frozen, true, &rng};
  if (min_relu_margin(net, x, fixed) < 1e-3) return -1.0;

  Matrix<double> grad;
  net.zero_grad();
  mse_loss(net.forward(x, fixed), y, grad);
  net.backward(grad);
  std::vector<double> analytic;
  for (const auto& p : net.params())
    for (Index i = 0; i < p.size; ++i) analytic.push_back(p.grad[i]);

  auto loss = [&] {
    Matrix<double> g;
    return mse_loss(net.forward(x, fixed), y, g);
  };
  const std::vector<double> numeric = numeric_gradient(net, loss);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  return worst;
}

}  // namespace oracle
