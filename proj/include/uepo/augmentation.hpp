#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "uepo/dataset.hpp"
#include "uepo/diffusion.hpp"
#include "uepo/dynamics.hpp"
#include "uepo/envs.hpp"
#include "uepo/error.hpp"

namespace uepo {

class Rng;

struct FilterConfig {
  double epsilon = 0.05;
  double ratio = 2.0;             // target |D_diff| / |D| in transitions
  std::size_t max_attempts = 0;   // 0: ceil(50 * ratio * |D| / T)

  void validate() const;
};

enum class FilterDecision { kAccept, kReject };

/// Samples one action sequence from `policy` conditioned on s0 (held
/// window) with `seed` and executes it open loop in the real environment.
/// The environment noise stream is seeded from `seed` as well.
Trajectory rollout_virtual(const Environment& env, const DiffusionPolicy& policy,
                           std::span<const double> s0, std::uint64_t seed);

/// Mean over transitions of KL(env law || model prediction).
double trajectory_kl(const Trajectory& traj, const Environment& env, const GaussianDynamics& model);

/// Accepts iff score < epsilon.
FilterDecision filter(double score, const FilterConfig& cfg);

struct AugmentationReport {
  std::size_t attempts = 0;
  std::size_t accepted = 0;
  std::size_t real_transitions = 0;
  std::size_t synthetic_transitions = 0;
  double target_ratio = 0.0;
  std::vector<double> kl_scores;  // one per attempt, in attempt order

  double acceptance_rate() const;
  double achieved_ratio() const;
  /// key = value block.
  std::string summary() const;
  /// bin_lo,bin_hi,count rows over the KL scores.
  std::string kl_histogram_csv(std::size_t bins = 20) const;
};

class AugmentationStarvationError : public Error {
 public:
  AugmentationStarvationError(const std::string& msg, AugmentationReport report)
      : Error(msg), report_(std::move(report)) {}
  const AugmentationReport& report() const { return report_; }

 private:
  AugmentationReport report_;
};

struct AugmentationResult {
  TrajectoryDataset synthetic;
  AugmentationReport report;
};

/// Repeats rollout / score / filter from initial states of `real` until the
/// accepted transition count reaches ratio * |real| or the attempt budget
/// runs out. The total is capped at 3 * |real| by truncating the last
/// accepted trajectory. Throws AugmentationStarvationError when nothing is
/// accepted.
AugmentationResult build_augmented(const Environment& env, const DiffusionPolicy& policy,
                                   const GaussianDynamics& model_init,
                                   const TrajectoryDataset& real, const FilterConfig& cfg,
                                   Rng& rng);

}  // namespace uepo
