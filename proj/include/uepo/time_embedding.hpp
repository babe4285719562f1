#pragma once

#include <cstddef>

#include "uepo/matrix.hpp"

namespace uepo {

/// Sinusoidal embedding of diffusion step t out of k.
///
/// With half = dim / 2 the frequencies are w_i = (2k)^(-i/half) for
/// i = 0..half-1; entry i is sin(t * w_i) and entry half + i is cos(t * w_i).
Vector time_embedding(std::size_t t, std::size_t k, std::size_t dim);

}  // namespace uepo
