#include "uepo/time_embedding.hpp"

#include <cmath>
#include <string>

namespace uepo {

Vector time_embedding(std::size_t t, std::size_t k, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("time embedding dimension must be even and positive, got " +
                      std::to_string(dim));
  }
  if (k == 0 || t > k) {
    throw ConfigError("time embedding step " + std::to_string(t) + " outside [0, " +
                      std::to_string(k) + "]");
  }
  const std::size_t half = dim / 2;
  const double log_period = std::log(2.0 * static_cast<double>(k));
  Vector out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-log_period * static_cast<double>(i) / static_cast<double>(half));
    const double angle = static_cast<double>(t) * freq;
    out[i] = std::sin(angle);
    out[half + i] = std::cos(angle);
  }
  return out;
}

}  // namespace uepo
