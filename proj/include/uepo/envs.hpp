#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include "uepo/matrix.hpp"

namespace uepo {

class Rng;

/// Gaussian law of the next state: mean and per-dimension variance.
struct TransitionDist {
  Vector mean;
  Vector variance;
};

/// Micro-environment with a known Gaussian transition law
///   s' = f(s, a) + N(0, sigma_env^2 I)
/// so that KL terms against it are exact.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual std::size_t horizon() const = 0;
  virtual double action_low() const = 0;
  virtual double action_high() const = 0;
  virtual std::size_t mode_count() const { return 2; }

  virtual Vector reset(Rng& rng) const = 0;
  virtual double reward(std::span<const double> s, std::span<const double> a,
                        std::span<const double> s_next) const = 0;
  /// Scripted demonstrator for behavior mode `mode` (noise-free).
  virtual Vector scripted_action(std::span<const double> s, std::size_t mode) const = 0;

  double sigma() const { return sigma_; }

  /// Closed-form mean and sigma^2 variance of s'. Actions outside the box
  /// are clipped first.
  TransitionDist true_dist(std::span<const double> s, std::span<const double> a) const;
  /// Samples s'. Out-of-box actions are clipped and counted.
  Vector step(std::span<const double> s, std::span<const double> a, Rng& rng) const;

  std::size_t clipped_action_count() const { return clipped_actions_; }

 protected:
  explicit Environment(double sigma);
  virtual Vector mean_next(std::span<const double> s, std::span<const double> a) const = 0;
  /// Post-processing applied to a sampled state (angle wrapping).
  virtual void canonicalize(Vector& s) const { (void)s; }

 private:
  Vector clip_action(std::span<const double> a, bool count) const;
  double sigma_;
  mutable std::size_t clipped_actions_ = 0;
};

/// Planar double integrator: state (x, y, vx, vy), action (ax, ay) in [-1, 1]^2.
///   p' = p + dt * v,   v' = (1 - damping) * v + dt * a
/// Reward is minus the distance from p' to the nearer of the goals (1, 1)
/// and (1, -1). Mode 0 steers to (1, 1), mode 1 to (1, -1).
class PointMass2D final : public Environment {
 public:
  static constexpr double kDt = 0.1;
  static constexpr double kDamping = 0.05;
  static constexpr double kGain = 0.8;
  static constexpr double kDampingGain = 1.0;

  explicit PointMass2D(double sigma = 0.01) : Environment(sigma) {}

  std::string name() const override { return "point_mass"; }
  std::size_t state_dim() const override { return 4; }
  std::size_t action_dim() const override { return 2; }
  std::size_t horizon() const override { return 40; }
  double action_low() const override { return -1.0; }
  double action_high() const override { return 1.0; }

  Vector reset(Rng& rng) const override;
  double reward(std::span<const double> s, std::span<const double> a,
                std::span<const double> s_next) const override;
  Vector scripted_action(std::span<const double> s, std::size_t mode) const override;

  static Vector goal(std::size_t mode);

 protected:
  Vector mean_next(std::span<const double> s, std::span<const double> a) const override;
};

/// Torque-limited pendulum: state (theta, theta_dot), theta = 0 upright,
/// wrapped to (-pi, pi]. Semi-implicit Euler with g = 10, m = 1, l = 1,
/// dt = 0.05:
///   theta_dot' = theta_dot + dt * (g/l * sin(theta) + u / (m l^2))
///   theta'     = wrap(theta + dt * theta_dot')
/// Mode 0 swings up counter-clockwise, mode 1 clockwise.
class Pendulum1 final : public Environment {
 public:
  static constexpr double kDt = 0.05;
  static constexpr double kGravity = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;
  static constexpr double kMaxTorque = 2.0;

  explicit Pendulum1(double sigma = 0.01) : Environment(sigma) {}

  std::string name() const override { return "pendulum"; }
  std::size_t state_dim() const override { return 2; }
  std::size_t action_dim() const override { return 1; }
  std::size_t horizon() const override { return 50; }
  double action_low() const override { return -kMaxTorque; }
  double action_high() const override { return kMaxTorque; }

  Vector reset(Rng& rng) const override;
  double reward(std::span<const double> s, std::span<const double> a,
                std::span<const double> s_next) const override;
  Vector scripted_action(std::span<const double> s, std::size_t mode) const override;

 protected:
  Vector mean_next(std::span<const double> s, std::span<const double> a) const override;
  void canonicalize(Vector& s) const override;
};

/// Maps an angle to (-pi, pi].
double wrap_angle(double theta);

std::unique_ptr<Environment> make_environment(const std::string& name, double sigma);

}  // namespace uepo
