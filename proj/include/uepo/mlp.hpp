#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "uepo/matrix.hpp"

namespace uepo {

class Rng;

/// Fully connected network: tanh on hidden layers, identity on the output.
///
/// Parameters live in one flat vector in canonical order: layer by layer,
/// the weight matrix (row-major, out x in) followed by the bias vector.
/// Checkpoints and optimizer state rely on this order.
class Mlp {
 public:
  /// Activations recorded by forward() and consumed by backward().
  struct Tape {
    std::vector<Vector> activations;  // activations[0] is the input
  };

  Mlp() = default;
  /// Zero-initialized network.
  explicit Mlp(std::vector<std::size_t> layer_widths);
  /// Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases.
  static Mlp glorot(std::vector<std::size_t> layer_widths, Rng& rng);

  const std::vector<std::size_t>& layer_widths() const { return widths_; }
  std::size_t layer_count() const { return widths_.empty() ? 0 : widths_.size() - 1; }
  std::size_t input_size() const { return widths_.front(); }
  std::size_t output_size() const { return widths_.back(); }
  std::size_t parameter_count() const { return params_.size(); }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  /// Offset of weight (row, col) of layer l inside parameters().
  std::size_t weight_index(std::size_t layer, std::size_t row, std::size_t col) const;
  std::size_t bias_index(std::size_t layer, std::size_t row) const;

  Vector forward(std::span<const double> x) const;
  Vector forward(std::span<const double> x, Tape& tape) const;

  /// Gradient of dot(upstream, forward(x)) w.r.t. the parameters.
  Vector backward(std::span<const double> x, std::span<const double> upstream) const;

  /// Adds d(upstream . output)/d(theta) into grad; optionally writes the
  /// gradient w.r.t. the input into input_grad.
  void accumulate_gradient(const Tape& tape, std::span<const double> upstream,
                           std::span<double> grad, std::span<double> input_grad = {}) const;

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  void check_widths() const;

  std::vector<std::size_t> widths_;
  std::vector<std::size_t> weight_offsets_;
  std::vector<std::size_t> bias_offsets_;
  Vector params_;
};

}  // namespace uepo
