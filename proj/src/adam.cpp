#include "uepo/adam.hpp"

#include <cmath>
#include <string>

namespace uepo {

Adam::Adam(std::size_t parameter_count, AdamConfig cfg)
    : config(cfg), first_moment(parameter_count, 0.0), second_moment(parameter_count, 0.0) {
  if (!(cfg.step_size > 0 && cfg.moment_decay_1 > 0 && cfg.moment_decay_1 < 1 &&
        cfg.moment_decay_2 > 0 && cfg.moment_decay_2 < 1 && cfg.epsilon_stability > 0)) {
    throw ConfigError("adam hyperparameters out of range");
  }
}

void Adam::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != first_moment.size() || grads.size() != first_moment.size()) {
    throw ShapeError("adam expects " + std::to_string(first_moment.size()) + " parameters, got " +
                     std::to_string(params.size()) + " / " + std::to_string(grads.size()));
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NonFiniteError("non-finite gradient component at index " + std::to_string(i));
    }
  }
  ++step_count;
  const double b1 = config.moment_decay_1;
  const double b2 = config.moment_decay_2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    first_moment[i] = b1 * first_moment[i] + (1.0 - b1) * grads[i];
    second_moment[i] = b2 * second_moment[i] + (1.0 - b2) * grads[i] * grads[i];
    const double m_hat = first_moment[i] / c1;
    const double v_hat = second_moment[i] / c2;
    params[i] -= config.step_size * m_hat / (std::sqrt(v_hat) + config.epsilon_stability);
  }
}

}  // namespace uepo
