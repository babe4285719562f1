#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "uepo/matrix.hpp"

namespace uepo {

class Rng;

struct DivergenceConfig {
  double tau = 0.5;   // similarity threshold
  double eta = 0.1;   // perturbation strength; 0 disables guidance
  std::size_t guided_steps = 10;  // guidance fires on the last guided_steps reverse steps

  void validate() const;
};

struct PairDivergence {
  std::size_t i = 0;
  std::size_t j = 0;
  double value = 0.0;
};

/// First differences: row t is a[t+1] - a[t]. Needs T >= 2.
Matrix velocity(const ActionSequence& a);
/// Second differences. Needs T >= 3.
Matrix acceleration(const ActionSequence& a);

/// Dynamics-level divergence between two action sequences:
///
///   (1/T) * ( sum_t |v_i(t) - v_j(t)|_2  +  sum_t (1 - cos(acc_i(t), acc_j(t))) )
///
/// The velocity sum runs over the T-1 first differences and the
/// acceleration sum over the T-2 second differences. A zero acceleration
/// vector has cosine 1 against anything, so its term vanishes.
double div(const ActionSequence& a_i, const ActionSequence& a_j);

/// All pairwise divergences (i < j).
std::vector<PairDivergence> pairwise_divergence(std::span<const ActionSequence> seqs);
/// Smallest pairwise divergence; 0 for fewer than two sequences.
double min_pairwise_divergence(std::span<const ActionSequence> seqs);

/// eta * (tau - d) / tau below the threshold, 0 at or above it.
double sigma_div(double d, const DivergenceConfig& cfg);

/// Adds i.i.d. N(0, sigma^2) noise. sigma == 0 returns the input and draws nothing.
ActionSequence perturb(const ActionSequence& a, double sigma, Rng& rng);

/// Perturbs `current` when its minimum divergence to the predecessors is
/// below tau. Empty predecessors or eta == 0 leave it unchanged.
ActionSequence guide(const ActionSequence& current, std::span<const ActionSequence> predecessors,
                     const DivergenceConfig& cfg, Rng& rng);

}  // namespace uepo
