#include "uepo/envs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "uepo/rng.hpp"

namespace uepo {

Environment::Environment(double sigma) : sigma_(sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("env sigma must be >= 0");
}

Vector Environment::clip_action(std::span<const double> a, bool count) const {
  if (a.size() != action_dim()) {
    throw ShapeError(name() + " expects action dim " + std::to_string(action_dim()));
  }
  Vector out(a.begin(), a.end());
  bool clipped = false;
  for (double& v : out) {
    const double c = std::clamp(v, action_low(), action_high());
    clipped = clipped || c != v;
    v = c;
  }
  if (clipped && count) ++clipped_actions_;
  return out;
}

TransitionDist Environment::true_dist(std::span<const double> s, std::span<const double> a) const {
  if (s.size() != state_dim()) {
    throw ShapeError(name() + " expects state dim " + std::to_string(state_dim()));
  }
  const Vector act = clip_action(a, false);
  return {mean_next(s, act), Vector(state_dim(), sigma_ * sigma_)};
}

Vector Environment::step(std::span<const double> s, std::span<const double> a, Rng& rng) const {
  if (s.size() != state_dim()) {
    throw ShapeError(name() + " expects state dim " + std::to_string(state_dim()));
  }
  const Vector act = clip_action(a, true);
  Vector next = mean_next(s, act);
  for (double& v : next) v += sigma_ * rng.normal();
  canonicalize(next);
  return next;
}

Vector PointMass2D::reset(Rng& rng) const {
  return {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.0, 0.0};
}

Vector PointMass2D::mean_next(std::span<const double> s, std::span<const double> a) const {
  return {s[0] + kDt * s[2], s[1] + kDt * s[3], (1.0 - kDamping) * s[2] + kDt * a[0],
          (1.0 - kDamping) * s[3] + kDt * a[1]};
}

Vector PointMass2D::goal(std::size_t mode) {
  return mode == 0 ? Vector{1.0, 1.0} : Vector{1.0, -1.0};
}

double PointMass2D::reward(std::span<const double>, std::span<const double>,
                           std::span<const double> s_next) const {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < 2; ++m) {
    const Vector g = goal(m);
    best = std::min(best, std::hypot(s_next[0] - g[0], s_next[1] - g[1]));
  }
  return -best;
}

Vector PointMass2D::scripted_action(std::span<const double> s, std::size_t mode) const {
  const Vector g = goal(mode);
  Vector a(2);
  for (std::size_t i = 0; i < 2; ++i) {
    a[i] = std::clamp(kGain * (g[i] - s[i]) - kDampingGain * s[2 + i], -1.0, 1.0);
  }
  return a;
}

double wrap_angle(double theta) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  return theta - two_pi * std::ceil((theta - std::numbers::pi) / two_pi);
}

Vector Pendulum1::reset(Rng& rng) const {
  return {wrap_angle(std::numbers::pi + rng.uniform(-0.05, 0.05)), 0.0};
}

Vector Pendulum1::mean_next(std::span<const double> s, std::span<const double> a) const {
  const double acc = kGravity / kLength * std::sin(s[0]) + a[0] / (kMass * kLength * kLength);
  const double omega = s[1] + kDt * acc;
  return {wrap_angle(s[0] + kDt * omega), omega};
}

void Pendulum1::canonicalize(Vector& s) const { s[0] = wrap_angle(s[0]); }

double Pendulum1::reward(std::span<const double>, std::span<const double> a,
                         std::span<const double> s_next) const {
  return -(s_next[0] * s_next[0] + 0.1 * s_next[1] * s_next[1] + 0.001 * a[0] * a[0]);
}

Vector Pendulum1::scripted_action(std::span<const double> s, std::size_t mode) const {
  const double theta = s[0];
  const double omega = s[1];
  if (std::abs(theta) < 0.5) {
    return {std::clamp(-(20.0 * theta + 4.0 * omega), -kMaxTorque, kMaxTorque)};
  }
  // Energy pumping toward the upright energy level (0 at rest upright).
  const double energy = 0.5 * omega * omega + kGravity / kLength * (std::cos(theta) - 1.0);
  double direction = omega > 0.0 ? 1.0 : (omega < 0.0 ? -1.0 : 0.0);
  if (std::abs(omega) < 1e-3) direction = mode == 0 ? 1.0 : -1.0;
  return {std::clamp(-energy * direction, -kMaxTorque, kMaxTorque)};
}

std::unique_ptr<Environment> make_environment(const std::string& name, double sigma) {
  if (name == "point_mass") return std::make_unique<PointMass2D>(sigma);
  if (name == "pendulum") return std::make_unique<Pendulum1>(sigma);
  throw ConfigError("unknown environment '" + name + "'");
}

}  // namespace uepo
