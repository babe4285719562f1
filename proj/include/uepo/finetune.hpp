#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uepo/adam.hpp"
#include "uepo/diffusion.hpp"
#include "uepo/dynamics.hpp"
#include "uepo/envs.hpp"
#include "uepo/error.hpp"
#include "uepo/mlp.hpp"

namespace uepo {

class Rng;

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 1.0;

/// Step-level Gaussian policy with tanh squashing:
///   u ~ N(mu(s), diag(exp(2 log_std))),  a = scale * tanh(u)
///   log p(a|s) = log N(u; mu, sigma) - sum_i log(scale * (1 - tanh(u_i)^2))
/// The flat parameter vector is the network parameters followed by log_std.
class GaussianPolicy {
 public:
  struct Draw {
    Vector pre_squash;
    Vector action;
    double log_prob = 0.0;
  };

  GaussianPolicy(Mlp net, Vector log_std, double action_scale);
  static GaussianPolicy create(std::size_t state_dim, std::size_t action_dim,
                               const std::vector<std::size_t>& hidden, double action_scale,
                               double initial_log_std, Rng& rng);

  std::size_t state_dim() const { return net_.input_size(); }
  std::size_t action_dim() const { return net_.output_size(); }
  double action_scale() const { return scale_; }
  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  const Vector& log_std() const { return log_std_; }
  /// log_std clamped to [-5, 1].
  Vector effective_log_std() const;

  Vector pre_squash_mean(std::span<const double> s) const;
  /// scale * tanh(mu(s)): the deterministic action.
  Vector mean_action(std::span<const double> s) const;
  Draw sample(std::span<const double> s, Rng& rng) const;
  /// Log-density of the squashed action whose pre-squash value is u.
  double log_prob(std::span<const double> s, std::span<const double> u) const;
  /// Log-density at an action strictly inside the box.
  double action_log_density(std::span<const double> s, std::span<const double> a) const;

  std::size_t parameter_count() const { return net_.parameter_count() + log_std_.size(); }
  Vector flat_parameters() const;
  void set_flat_parameters(std::span<const double> p);

  /// Adds coef * d log N(u; mu(s), sigma) / d theta into grad (the squash
  /// correction does not depend on theta).
  void accumulate_log_prob_gradient(std::span<const double> s, std::span<const double> u,
                                    double coef, std::span<double> grad) const;

  friend bool operator==(const GaussianPolicy&, const GaussianPolicy&) = default;

 private:
  Mlp net_;
  Vector log_std_;
  double scale_;
};

/// Checkpoint: core MLP block, then d_a log_std values and the action scale.
void save_head(const std::filesystem::path& path, const GaussianPolicy& head);
GaussianPolicy load_head(const std::filesystem::path& path);

using RewardFn =
    std::function<double(std::span<const double>, std::span<const double>, std::span<const double>)>;

struct SelectionResult {
  std::size_t best_index = 0;
  std::vector<double> scores;
};

/// First index of the maximum score (ties go to the lower index).
std::size_t select_index(std::span<const double> scores);

/// Scores each sub-policy by its mean return over n_rollouts model-based
/// rollouts under the learned dynamics. Rollout r starts from
/// initial_states[r % size], samples one ensemble (with guidance) from the
/// held window, and executes every member open loop for T steps with next
/// states sampled from the model. Model noise is shared across members.
SelectionResult select_policy(const DiffusionPolicy& policy, const EnsembleSpec& spec,
                              const GaussianDynamics& model, const RewardFn& reward,
                              std::span<const Vector> initial_states, std::size_t n_rollouts,
                              std::uint64_t seed);

struct DistillConfig {
  std::vector<std::size_t> hidden{64, 64};
  double target_mse = 0.02;
  std::size_t max_epochs = 400;
  std::size_t batch_size = 64;
  double initial_log_std = -1.0;
  AdamConfig adam{.step_size = 3e-3};
};

struct DistillResult {
  GaussianPolicy head;
  double mse = 0.0;
  std::size_t epochs = 0;
  std::optional<std::string> warning;
};

/// The selected sub-policy's first action for every window in the pool.
std::vector<Vector> sub_policy_targets(const DiffusionPolicy& policy, std::uint64_t seed,
                                       std::span<const StateSequence> windows);

/// Regresses scale * tanh(mu(s)) onto the targets (s = last row of each
/// window) until the MSE drops below target_mse or max_epochs is hit.
DistillResult fit_head(std::span<const Vector> states, std::span<const Vector> targets,
                       double action_scale, const DistillConfig& cfg, Rng& rng);

DistillResult distill(const DiffusionPolicy& policy, std::uint64_t seed,
                      std::span<const StateSequence> windows, const DistillConfig& cfg, Rng& rng);

struct PpoConfig {
  double clip_ratio = 0.2;
  double discount = 0.99;
  double gae_lambda = 0.95;
  std::size_t epochs_per_batch = 10;
  std::size_t batch_episodes = 16;
  std::size_t minibatch_size = 128;
  std::vector<std::size_t> value_hidden{64, 64};
  AdamConfig policy_adam{.step_size = 3e-4};
  AdamConfig value_adam{.step_size = 1e-3};

  void validate() const;
};

/// One on-policy sample: pre-squash action, behavior log-probability,
/// advantage and value target.
struct PpoSample {
  Vector s;
  Vector u;
  double log_prob_old = 0.0;
  double advantage = 0.0;
  double value_target = 0.0;
};

struct SurrogateResult {
  double value = 0.0;     // mean_i min(r_i A_i, clip(r_i) A_i)
  Vector gradient;        // d value / d theta (ascent direction)
};

/// Clipped surrogate and its gradient w.r.t. the head's flat parameters.
/// Samples whose ratio is clipped against their advantage sign contribute
/// no gradient.
SurrogateResult clipped_surrogate(const GaussianPolicy& head, std::span<const PpoSample> samples,
                                  double clip_ratio);

/// Generalized advantage estimates for one episode. values has one more
/// entry than rewards (bootstrap value of the final state).
Vector gae(std::span<const double> rewards, std::span<const double> values, double discount,
           double lambda);

struct IterationStats {
  double mean_return = 0.0;
  double std_return = 0.0;
};

struct PpoResult {
  GaussianPolicy head;
  Mlp value;
  std::vector<IterationStats> curve;  // returns of the batch collected at each iteration
  Vector ratio_shift;                  // max |ratio - 1| over each batch after its updates
};

class TrainingDivergenceError : public Error {
 public:
  TrainingDivergenceError(const std::string& msg, GaussianPolicy last_stable)
      : Error(msg), last_stable_(std::move(last_stable)) {}
  const GaussianPolicy& last_stable() const { return last_stable_; }

 private:
  GaussianPolicy last_stable_;
};

/// Mean and std of episode returns of `head` acting stochastically.
IterationStats evaluate_head(const GaussianPolicy& head, const Environment& env,
                             std::size_t episodes, std::uint64_t seed);

/// Clipped-surrogate policy gradient with GAE. After every minibatch step
/// the ratios of the whole batch are checked; a step that pushes any ratio
/// outside [1 - clip, 1 + clip] is halved until it fits (up to 8 times),
/// otherwise undone, after which the batch's policy updates stop.
PpoResult ppo_finetune(const GaussianPolicy& head, const Environment& env, const PpoConfig& cfg,
                       std::size_t iterations, Rng& rng);

/// iteration,mean_return,std_return
std::string return_curve_csv(std::span<const IterationStats> curve);

}  // namespace uepo
