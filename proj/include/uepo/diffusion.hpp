#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "uepo/adam.hpp"
#include "uepo/divergence.hpp"
#include "uepo/matrix.hpp"
#include "uepo/mlp.hpp"

namespace uepo {

class Rng;

/// Forward-process coefficients. Index t in [0, k) denotes the t-th
/// noising step; alpha_bar[t] = prod_{i <= t} alpha[i].
struct NoiseSchedule {
  std::size_t k = 0;
  Vector beta;
  Vector alpha;
  Vector alpha_bar;

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;
};

NoiseSchedule make_linear_schedule(std::size_t k, double beta_min, double beta_max);
/// Validates 0 < beta < 1 and derives alpha and alpha_bar.
NoiseSchedule schedule_from_betas(Vector beta);

/// sqrt(alpha_bar[t]) * a0 + sqrt(1 - alpha_bar[t]) * eps
ActionSequence q_sample(const ActionSequence& a0, std::size_t t, const Matrix& eps,
                        const NoiseSchedule& sched);

struct DiffusionDims {
  std::size_t horizon = 16;  // T
  std::size_t action_dim = 2;
  std::size_t state_dim = 4;
  std::size_t embed_dim = 16;
  double action_low = -1.0;
  double action_high = 1.0;

  std::size_t denoiser_input() const { return horizon * (action_dim + state_dim) + embed_dim; }
  std::size_t denoiser_output() const { return horizon * action_dim; }

  friend bool operator==(const DiffusionDims&, const DiffusionDims&) = default;
};

/// State-conditional noise-prediction model over whole action sequences.
///
/// The denoiser sees [flattened noisy actions, flattened state window,
/// time embedding] and predicts the injected noise. The state window is the
/// T most recently observed states ending at the first action's state,
/// left-padded with the episode's first state.
class DiffusionPolicy {
 public:
  DiffusionPolicy(DiffusionDims dims, NoiseSchedule schedule, Mlp denoiser);

  static DiffusionPolicy create(DiffusionDims dims, NoiseSchedule schedule,
                                const std::vector<std::size_t>& hidden, Rng& rng);

  const DiffusionDims& dims() const { return dims_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const Mlp& denoiser() const { return denoiser_; }
  Mlp& denoiser() { return denoiser_; }

  Vector denoiser_input(const ActionSequence& a_t, const StateSequence& s, std::size_t t) const;
  Matrix predict_noise(const ActionSequence& a_t, const StateSequence& s, std::size_t t) const;

  void check_actions(const ActionSequence& a) const;
  void check_states(const StateSequence& s) const;

  friend bool operator==(const DiffusionPolicy&, const DiffusionPolicy&) = default;

 private:
  DiffusionDims dims_;
  NoiseSchedule schedule_;
  Mlp denoiser_;
};

struct TrainingExample {
  StateSequence states;
  ActionSequence actions;
};

/// The random quantities of one loss evaluation: a diffusion step and the
/// injected noise for one example.
struct NoiseDraw {
  std::size_t step = 0;
  Matrix eps;
};

struct LossAndGradient {
  double loss = 0.0;
  Vector gradient;
};

std::vector<NoiseDraw> draw_noise(const DiffusionPolicy& policy, std::size_t count, Rng& rng);

/// Mean squared error between injected and predicted noise, averaged over
/// the batch and the T * d_a entries, with its parameter gradient.
LossAndGradient denoising_loss(const DiffusionPolicy& policy,
                               std::span<const TrainingExample> batch,
                               std::span<const NoiseDraw> draws);
LossAndGradient denoising_loss(const DiffusionPolicy& policy,
                               std::span<const TrainingExample> batch, Rng& rng);

/// Mean of the ancestral reverse transition out of a_t at step t.
ActionSequence reverse_mean(const DiffusionPolicy& policy, const ActionSequence& a_t,
                            const StateSequence& s, std::size_t t);
/// One ancestral step; noise sqrt(beta[t]) * z is added only for t > 0.
ActionSequence reverse_step(const DiffusionPolicy& policy, const ActionSequence& a_t,
                            const StateSequence& s, std::size_t t, Rng& rng);

/// The a_K draw that sample() starts from for a given seed.
ActionSequence initial_noise(const DiffusionPolicy& policy, std::uint64_t seed);

/// Full reverse chain from a seeded a_K, clipped to the action box.
ActionSequence sample(const DiffusionPolicy& policy, const StateSequence& s, std::uint64_t seed);

struct EnsembleSpec {
  std::vector<std::uint64_t> seeds;
  DivergenceConfig divergence;

  /// seeds[i] = mix_seed(base_seed, i)
  static EnsembleSpec from_base_seed(std::uint64_t base_seed, std::size_t n,
                                     DivergenceConfig divergence);
  std::size_t size() const { return seeds.size(); }
  void validate() const;
};

/// Samples sub-policies in seed order. For i > 0 and the final
/// guided_steps reverse steps, the current iterate is passed through
/// guide() against the finished outputs of sub-policies 0..i-1. Guidance
/// noise comes from a stream separate from the sampling noise, so eta = 0
/// reproduces sample() exactly.
std::vector<ActionSequence> sample_ensemble(const DiffusionPolicy& policy, const StateSequence& s,
                                            const EnsembleSpec& spec);

struct DiffusionTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  AdamConfig adam{};
};

/// Minibatch training on the denoising loss; returns the per-step losses.
std::vector<double> train_diffusion(DiffusionPolicy& policy,
                                    std::span<const TrainingExample> data,
                                    const DiffusionTrainConfig& cfg, Rng& rng);

/// Checkpoint: core MLP block, then T, d_a, d_s, embed dim (u32), action
/// box (f64 x2), k (u32) and the beta array.
void save_policy(const std::filesystem::path& path, const DiffusionPolicy& policy);
DiffusionPolicy load_policy(const std::filesystem::path& path);

}  // namespace uepo
