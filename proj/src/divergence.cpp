#include "uepo/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "uepo/rng.hpp"

namespace uepo {

void DivergenceConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("divergence tau must be > 0");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("divergence eta must be >= 0");
  if (guided_steps == 0) throw ConfigError("divergence guided_steps must be positive");
}

Matrix velocity(const ActionSequence& a) {
  if (a.rows() < 2) {
    throw DegenerateHorizonError("velocity needs T >= 2, got T = " + std::to_string(a.rows()));
  }
  Matrix v(a.rows() - 1, a.cols());
  for (std::size_t t = 0; t + 1 < a.rows(); ++t) {
    for (std::size_t c = 0; c < a.cols(); ++c) v(t, c) = a(t + 1, c) - a(t, c);
  }
  return v;
}

Matrix acceleration(const ActionSequence& a) {
  if (a.rows() < 3) {
    throw DegenerateHorizonError("acceleration needs T >= 3, got T = " + std::to_string(a.rows()));
  }
  return velocity(velocity(a));
}

namespace {

double norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

// 1 - cos(x, y) evaluated as |x/|x| - y/|y||^2 / 2, which is exactly zero
// for identical vectors.
double one_minus_cos(std::span<const double> x, std::span<const double> y) {
  const double nx = norm(x);
  const double ny = norm(y);
  if (nx == 0.0 || ny == 0.0) return 0.0;
  double s = 0.0;
  for (std::size_t c = 0; c < x.size(); ++c) {
    const double d = x[c] / nx - y[c] / ny;
    s += d * d;
  }
  return 0.5 * s;
}

}  // namespace

double div(const ActionSequence& a_i, const ActionSequence& a_j) {
  require_same_shape(a_i, a_j, "div");
  if (a_i.rows() < 3) {
    throw DegenerateHorizonError("div needs T >= 3, got T = " + std::to_string(a_i.rows()));
  }
  const Matrix vi = velocity(a_i);
  const Matrix vj = velocity(a_j);
  double total = 0.0;
  Vector diff(a_i.cols());
  for (std::size_t t = 0; t < vi.rows(); ++t) {
    for (std::size_t c = 0; c < diff.size(); ++c) diff[c] = vi(t, c) - vj(t, c);
    total += norm(diff);
  }
  const Matrix ai = velocity(vi);
  const Matrix aj = velocity(vj);
  for (std::size_t t = 0; t < ai.rows(); ++t) total += one_minus_cos(ai.row(t), aj.row(t));
  return total / static_cast<double>(a_i.rows());
}

std::vector<PairDivergence> pairwise_divergence(std::span<const ActionSequence> seqs) {
  std::vector<PairDivergence> out;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    for (std::size_t j = i + 1; j < seqs.size(); ++j) out.push_back({i, j, div(seqs[i], seqs[j])});
  }
  return out;
}

double min_pairwise_divergence(std::span<const ActionSequence> seqs) {
  if (seqs.size() < 2) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : pairwise_divergence(seqs)) best = std::min(best, p.value);
  return best;
}

double sigma_div(double d, const DivergenceConfig& cfg) {
  if (d >= cfg.tau) return 0.0;
  return cfg.eta * (cfg.tau - d) / cfg.tau;
}

ActionSequence perturb(const ActionSequence& a, double sigma, Rng& rng) {
  if (sigma < 0.0) throw ConfigError("perturbation sigma must be >= 0");
  ActionSequence out = a;
  if (sigma == 0.0) return out;
  for (double& v : out.flat()) v += sigma * rng.normal();
  return out;
}

ActionSequence guide(const ActionSequence& current, std::span<const ActionSequence> predecessors,
                     const DivergenceConfig& cfg, Rng& rng) {
  if (predecessors.empty() || cfg.eta == 0.0) return current;
  double nearest = std::numeric_limits<double>::infinity();
  for (const auto& p : predecessors) nearest = std::min(nearest, div(current, p));
  return perturb(current, sigma_div(nearest, cfg), rng);
}

}  // namespace uepo
