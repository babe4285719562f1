#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "uepo/adam.hpp"
#include "uepo/dataset.hpp"
#include "uepo/matrix.hpp"
#include "uepo/mlp.hpp"

namespace uepo {

class Rng;

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 2.0;

struct Transition {
  Vector s;
  Vector a;
  Vector s_next;
  TransitionSource source = TransitionSource::kReal;
};

using TransitionBatch = std::vector<Transition>;

/// Flattens every transition of a dataset.
TransitionBatch transitions_of(const TrajectoryDataset& data, TransitionSource source);

/// Diagonal-Gaussian transition model. The network maps [s, a] to
/// [mean (d_s), raw log-variance (d_s)]; the log-variance is clamped to
/// [-10, 2].
class GaussianDynamics {
 public:
  GaussianDynamics(std::size_t state_dim, std::size_t action_dim, Mlp net);
  static GaussianDynamics create(std::size_t state_dim, std::size_t action_dim,
                                 const std::vector<std::size_t>& hidden, Rng& rng);

  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }

  TransitionDist predict(std::span<const double> s, std::span<const double> a) const;
  Vector sample_next(std::span<const double> s, std::span<const double> a, Rng& rng) const;

  friend bool operator==(const GaussianDynamics&, const GaussianDynamics&) = default;

 private:
  Vector input(std::span<const double> s, std::span<const double> a) const;
  std::size_t state_dim_;
  std::size_t action_dim_;
  Mlp net_;
};

struct NllResult {
  double loss = 0.0;
  Vector gradient;
};

/// Mean over the batch of -log N(s'; mean, diag(var)) summed over dimensions.
NllResult nll(const GaussianDynamics& m, std::span<const Transition> batch);
/// Loss only; no gradient buffer.
double nll_value(const GaussianDynamics& m, std::span<const Transition> batch);

/// Closed-form KL(p || q) between diagonal Gaussians, summed over dims.
double gaussian_kl(std::span<const double> p_mean, std::span<const double> p_var,
                   std::span<const double> q_mean, std::span<const double> q_var);

struct DynamicsTrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  AdamConfig adam{.step_size = 3e-3};
  // Step size follows a cosine from adam.step_size down to this fraction of it.
  double final_step_fraction = 0.01;
};

struct DynamicsTrainReport {
  double initial_loss = 0.0;
  std::vector<double> epoch_losses;  // full-pool NLL after each epoch
};

/// Minimizes nll over real + synthetic with uniform shuffling of the
/// concatenated pool (real first, then synthetic).
DynamicsTrainReport train_joint(GaussianDynamics& m, std::span<const Transition> real,
                                std::span<const Transition> synthetic,
                                const DynamicsTrainConfig& cfg, Rng& rng);

/// Checkpoint: core MLP block followed by d_s and d_a (u32).
void save_dynamics(const std::filesystem::path& path, const GaussianDynamics& m);
GaussianDynamics load_dynamics(const std::filesystem::path& path);

}  // namespace uepo
