#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "uepo/matrix.hpp"

namespace uepo {

struct AdamConfig {
  double step_size = 1e-3;
  double moment_decay_1 = 0.9;
  double moment_decay_2 = 0.999;
  double epsilon_stability = 1e-8;
};

/// Bias-corrected adaptive-moment optimizer state for one parameter vector.
struct Adam {
  Adam() = default;
  Adam(std::size_t parameter_count, AdamConfig cfg = {});

  /// Applies one update to params in place. Throws NonFiniteError (and
  /// leaves params and state untouched) if any gradient entry is not finite.
  void step(std::span<double> params, std::span<const double> grads);

  AdamConfig config;
  Vector first_moment;
  Vector second_moment;
  std::uint64_t step_count = 0;
};

}  // namespace uepo
