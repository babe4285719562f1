#include "uepo/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "uepo/rng.hpp"

namespace uepo {

PathNoise draw_path_noise(const DiffusionPolicy& policy, Rng& rng) {
  PathNoise n;
  for (std::size_t m = 0; m < policy.schedule().k; ++m) {
    n.eps.push_back(Matrix::normal(policy.dims().horizon, policy.dims().action_dim, rng));
  }
  return n;
}

PathNoise example_path_noise(const DiffusionPolicy& policy, const ObjectiveConfig& cfg,
                             std::size_t example) {
  Rng rng(mix_seed(cfg.path_seed, example));
  return draw_path_noise(policy, rng);
}

double seq_log_prob(const DiffusionPolicy& policy, const StateSequence& s, const ActionSequence& a,
                    const PathNoise& noise) {
  policy.check_actions(a);
  policy.check_states(s);
  const NoiseSchedule& sched = policy.schedule();
  if (noise.eps.size() != sched.k) throw ShapeError("path noise needs one draw per diffusion step");

  std::vector<ActionSequence> path{a};
  for (std::size_t m = 0; m < sched.k; ++m) {
    require_same_shape(a, noise.eps[m], "seq_log_prob path noise");
    ActionSequence next(a.rows(), a.cols());
    const double keep = std::sqrt(sched.alpha[m]);
    const double add = std::sqrt(sched.beta[m]);
    auto x = path.back().flat();
    auto e = noise.eps[m].flat();
    auto o = next.flat();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = keep * x[i] + add * e[i];
    path.push_back(std::move(next));
  }

  const double n = static_cast<double>(a.size());
  double total = 0.0;
  for (std::size_t t = 0; t < sched.k; ++t) {
    const ActionSequence mean = reverse_mean(policy, path[t + 1], s, t);
    const double var = sched.beta[t];
    double sq = 0.0;
    auto x = path[t].flat();
    auto mu = mean.flat();
    for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - mu[i]) * (x[i] - mu[i]);
    total += -0.5 * (sq / var + n * std::log(2.0 * std::numbers::pi * var));
  }
  return total;
}

EnsembleObjective objective_from_log_probs(const std::vector<Vector>& log_probs, double alpha) {
  if (log_probs.empty()) throw ShapeError("objective needs at least one sub-policy");
  const std::size_t batch = log_probs.front().size();
  if (batch == 0) throw ShapeError("objective needs a non-empty batch");
  for (const auto& lp : log_probs) {
    if (lp.size() != batch) throw ShapeError("sub-policies evaluated on different batches");
  }
  if (!std::isfinite(alpha)) throw ConfigError("objective alpha must be finite");

  const std::size_t n = log_probs.size();
  EnsembleObjective out{Vector(n, 0.0), Vector(n, 0.0), Vector(n, 0.0)};
  for (std::size_t b = 0; b < batch; ++b) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) best = std::max(best, log_probs[i][b]);
    for (std::size_t i = 0; i < n; ++i) {
      out.mean_log_prob[i] += log_probs[i][b];
      out.mean_penalty[i] += log_probs[i][b] - best;
    }
  }
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < n; ++i) {
    out.mean_log_prob[i] *= inv;
    out.mean_penalty[i] *= inv;
    out.objective[i] = out.mean_log_prob[i] + alpha * out.mean_penalty[i];
  }
  return out;
}

EnsembleObjective ensemble_objective(std::span<const DiffusionPolicy> policies,
                                     std::span<const TrainingExample> batch,
                                     const ObjectiveConfig& cfg) {
  if (policies.empty()) throw ShapeError("objective needs at least one sub-policy");
  if (batch.empty()) throw ShapeError("objective needs a non-empty batch");
  std::vector<Vector> log_probs(policies.size(), Vector(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const PathNoise noise = example_path_noise(policies.front(), cfg, b);
    for (std::size_t i = 0; i < policies.size(); ++i) {
      log_probs[i][b] = seq_log_prob(policies[i], batch[b].states, batch[b].actions, noise);
    }
  }
  return objective_from_log_probs(log_probs, cfg.alpha);
}

}  // namespace uepo
