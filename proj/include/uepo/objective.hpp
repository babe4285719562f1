#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "uepo/diffusion.hpp"

namespace uepo {

class Rng;

/// Noise draws that fix the forward noising path of one example:
/// eps[m] takes x_m to x_{m+1} for m = 0..k-1.
struct PathNoise {
  std::vector<Matrix> eps;
};

PathNoise draw_path_noise(const DiffusionPolicy& policy, Rng& rng);

struct ObjectiveConfig {
  double alpha = 0.1;
  std::uint64_t path_seed = 0;  // per-example path noise = f(path_seed, example index)
};

/// log of the product of the reverse-process Markov transitions along the
/// forward path of `a` fixed by `noise`:
///
///   x_0 = a,  x_{m+1} = sqrt(alpha[m]) x_m + sqrt(beta[m]) eps[m]
///   sum_{t=0}^{k-1} log N(x_t ; reverse_mean(x_{t+1}, t), beta[t] I)
double seq_log_prob(const DiffusionPolicy& policy, const StateSequence& s, const ActionSequence& a,
                    const PathNoise& noise);

struct EnsembleObjective {
  std::vector<double> objective;      // J_i
  std::vector<double> mean_log_prob;  // E[log p_i]
  std::vector<double> mean_penalty;   // E[log p_i - max_j log p_j]
};

/// J_i from precomputed log-probabilities, log_probs[i][b] for sub-policy i
/// and example b: mean_b log p_i + alpha * mean_b (log p_i - max_j log p_j).
EnsembleObjective objective_from_log_probs(const std::vector<Vector>& log_probs, double alpha);

/// Evaluates every sub-policy's seq_log_prob on the batch with path noise
/// shared across sub-policies per example, then applies
/// objective_from_log_probs.
EnsembleObjective ensemble_objective(std::span<const DiffusionPolicy> policies,
                                     std::span<const TrainingExample> batch,
                                     const ObjectiveConfig& cfg);

/// Shared per-example path noise used by ensemble_objective.
PathNoise example_path_noise(const DiffusionPolicy& policy, const ObjectiveConfig& cfg,
                             std::size_t example);

}  // namespace uepo
