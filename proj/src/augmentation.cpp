#include "uepo/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "uepo/rng.hpp"

namespace uepo {

void FilterConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("filter epsilon must be > 0");
  if (!(ratio >= 2.0 && ratio <= 3.0)) throw ConfigError("filter ratio must lie in [2, 3]");
}

Trajectory rollout_virtual(const Environment& env, const DiffusionPolicy& policy,
                           std::span<const double> s0, std::uint64_t seed) {
  const std::size_t horizon = policy.dims().horizon;
  const ActionSequence actions = sample(policy, hold_window(s0, horizon), seed);
  Trajectory traj;
  traj.env = env.name();
  traj.seed = seed;
  traj.noise_seed = mix_seed(seed, 0x656e76);
  traj.states = Matrix(horizon, env.state_dim());
  traj.actions = Matrix(horizon, env.action_dim());
  traj.next_states = Matrix(horizon, env.state_dim());
  traj.rewards.resize(horizon);
  Rng env_rng(traj.noise_seed);
  Vector s(s0.begin(), s0.end());
  for (std::size_t t = 0; t < horizon; ++t) {
    const auto a = actions.row(t);
    Vector next = env.step(s, a, env_rng);
    std::ranges::copy(s, traj.states.row(t).begin());
    std::ranges::copy(a, traj.actions.row(t).begin());
    std::ranges::copy(next, traj.next_states.row(t).begin());
    traj.rewards[t] = env.reward(s, a, next);
    s = std::move(next);
  }
  return traj;
}

double trajectory_kl(const Trajectory& traj, const Environment& env, const GaussianDynamics& model) {
  if (traj.length() == 0) throw ShapeError("trajectory_kl needs a non-empty trajectory");
  double total = 0.0;
  for (std::size_t t = 0; t < traj.length(); ++t) {
    const auto s = traj.states.row(t);
    const auto a = traj.actions.row(t);
    const TransitionDist truth = env.true_dist(s, a);
    const TransitionDist pred = model.predict(s, a);
    total += gaussian_kl(truth.mean, truth.variance, pred.mean, pred.variance);
  }
  return total / static_cast<double>(traj.length());
}

FilterDecision filter(double score, const FilterConfig& cfg) {
  return score < cfg.epsilon ? FilterDecision::kAccept : FilterDecision::kReject;
}

double AugmentationReport::acceptance_rate() const {
  return attempts == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(attempts);
}

double AugmentationReport::achieved_ratio() const {
  return real_transitions == 0
             ? 0.0
             : static_cast<double>(synthetic_transitions) / static_cast<double>(real_transitions);
}

std::string AugmentationReport::summary() const {
  std::ostringstream out;
  out.precision(17);
  out << "attempts = " << attempts << '\n'
      << "accepted = " << accepted << '\n'
      << "acceptance_rate = " << acceptance_rate() << '\n'
      << "real_transitions = " << real_transitions << '\n'
      << "synthetic_transitions = " << synthetic_transitions << '\n'
      << "target_ratio = " << target_ratio << '\n'
      << "achieved_ratio = " << achieved_ratio() << '\n';
  return out.str();
}

std::string AugmentationReport::kl_histogram_csv(std::size_t bins) const {
  std::ostringstream out;
  out.precision(17);
  out << "bin_lo,bin_hi,count\n";
  if (kl_scores.empty() || bins == 0) return out.str();
  const auto [lo_it, hi_it] = std::minmax_element(kl_scores.begin(), kl_scores.end());
  const double lo = *lo_it;
  const double width = (*hi_it - lo) > 0.0 ? (*hi_it - lo) / static_cast<double>(bins) : 1.0;
  std::vector<std::size_t> counts(bins, 0);
  for (double s : kl_scores) {
    auto b = static_cast<std::size_t>((s - lo) / width);
    counts[std::min(b, bins - 1)]++;
  }
  for (std::size_t b = 0; b < bins; ++b) {
    out << lo + width * static_cast<double>(b) << ',' << lo + width * static_cast<double>(b + 1)
        << ',' << counts[b] << '\n';
  }
  return out.str();
}

AugmentationResult build_augmented(const Environment& env, const DiffusionPolicy& policy,
                                   const GaussianDynamics& model_init,
                                   const TrajectoryDataset& real, const FilterConfig& cfg,
                                   Rng& rng) {
  cfg.validate();
  const std::size_t n_real = real.transition_count();
  if (n_real == 0) throw ShapeError("build_augmented needs real transitions");
  const std::vector<Vector> starts = real.initial_states();
  const std::size_t horizon = policy.dims().horizon;
  const auto target = static_cast<std::size_t>(std::ceil(cfg.ratio * static_cast<double>(n_real)));
  const std::size_t cap = 3 * n_real;
  const std::size_t max_attempts =
      cfg.max_attempts > 0
          ? cfg.max_attempts
          : static_cast<std::size_t>(std::ceil(50.0 * cfg.ratio * static_cast<double>(n_real) /
                                               static_cast<double>(horizon)));

  AugmentationResult result;
  result.synthetic.meta = real.meta;
  AugmentationReport& report = result.report;
  report.real_transitions = n_real;
  report.target_ratio = cfg.ratio;

  while (report.synthetic_transitions < target && report.attempts < max_attempts) {
    const Vector& s0 = starts[rng.index(starts.size())];
    const std::uint64_t seed = rng.next_u64();
    Trajectory traj = rollout_virtual(env, policy, s0, seed);
    const double score = trajectory_kl(traj, env, model_init);
    ++report.attempts;
    report.kl_scores.push_back(score);
    if (filter(score, cfg) == FilterDecision::kReject) continue;
    const std::size_t room = cap - report.synthetic_transitions;
    if (traj.length() > room) {
      traj.states = Matrix(room, traj.states.cols(),
                           Vector(traj.states.values().begin(),
                                  traj.states.values().begin() + room * traj.states.cols()));
      traj.actions = Matrix(room, traj.actions.cols(),
                            Vector(traj.actions.values().begin(),
                                   traj.actions.values().begin() + room * traj.actions.cols()));
      traj.next_states =
          Matrix(room, traj.next_states.cols(),
                 Vector(traj.next_states.values().begin(),
                        traj.next_states.values().begin() + room * traj.next_states.cols()));
      traj.rewards.resize(room);
    }
    ++report.accepted;
    report.synthetic_transitions += traj.length();
    result.synthetic.trajectories.push_back(std::move(traj));
  }
  if (report.accepted == 0) {
    throw AugmentationStarvationError(
        "augmentation starved: 0 of " + std::to_string(report.attempts) +
            " virtual trajectories passed KL < " + std::to_string(cfg.epsilon),
        report);
  }
  return result;
}

}  // namespace uepo
