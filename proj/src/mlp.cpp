#include "uepo/mlp.hpp"

#include <cmath>
#include <string>

#include "uepo/rng.hpp"

namespace uepo {

Mlp::Mlp(std::vector<std::size_t> layer_widths) : widths_(std::move(layer_widths)) {
  check_widths();
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    weight_offsets_.push_back(offset);
    offset += widths_[l + 1] * widths_[l];
    bias_offsets_.push_back(offset);
    offset += widths_[l + 1];
  }
  params_.assign(offset, 0.0);
}

Mlp Mlp::glorot(std::vector<std::size_t> layer_widths, Rng& rng) {
  Mlp m(std::move(layer_widths));
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    const std::size_t fan_in = m.widths_[l];
    const std::size_t fan_out = m.widths_[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    double* w = m.params_.data() + m.weight_offsets_[l];
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) w[i] = rng.uniform(-limit, limit);
  }
  return m;
}

void Mlp::check_widths() const {
  if (widths_.size() < 2) throw ConfigError("mlp needs at least input and output widths");
  for (std::size_t w : widths_) {
    if (w == 0) throw ConfigError("mlp layer widths must be positive");
  }
}

std::size_t Mlp::weight_index(std::size_t layer, std::size_t row, std::size_t col) const {
  return weight_offsets_[layer] + row * widths_[layer] + col;
}

std::size_t Mlp::bias_index(std::size_t layer, std::size_t row) const {
  return bias_offsets_[layer] + row;
}

Vector Mlp::forward(std::span<const double> x) const {
  Tape tape;
  return forward(x, tape);
}

Vector Mlp::forward(std::span<const double> x, Tape& tape) const {
  if (x.size() != input_size()) {
    throw ShapeError("mlp input has length " + std::to_string(x.size()) + ", expected " +
                     std::to_string(input_size()));
  }
  const std::size_t layers = layer_count();
  tape.activations.resize(layers + 1);
  tape.activations[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t n_in = widths_[l];
    const std::size_t n_out = widths_[l + 1];
    const double* w = params_.data() + weight_offsets_[l];
    const double* b = params_.data() + bias_offsets_[l];
    const Vector& in = tape.activations[l];
    Vector& out = tape.activations[l + 1];
    out.resize(n_out);
    for (std::size_t r = 0; r < n_out; ++r) {
      const double* wr = w + r * n_in;
      double acc = b[r];
      for (std::size_t c = 0; c < n_in; ++c) acc += wr[c] * in[c];
      out[r] = acc;
    }
    if (l + 1 < layers) {
      for (double& v : out) v = std::tanh(v);
    }
  }
  return tape.activations.back();
}

Vector Mlp::backward(std::span<const double> x, std::span<const double> upstream) const {
  Tape tape;
  forward(x, tape);
  Vector grad(parameter_count(), 0.0);
  accumulate_gradient(tape, upstream, grad);
  return grad;
}

void Mlp::accumulate_gradient(const Tape& tape, std::span<const double> upstream,
                              std::span<double> grad, std::span<double> input_grad) const {
  if (upstream.size() != output_size()) {
    throw ShapeError("mlp upstream has length " + std::to_string(upstream.size()) +
                     ", expected " + std::to_string(output_size()));
  }
  if (grad.size() != parameter_count()) throw ShapeError("mlp gradient buffer has wrong length");
  if (tape.activations.size() != layer_count() + 1) throw ShapeError("mlp tape is incomplete");

  Vector delta(upstream.begin(), upstream.end());
  Vector next;
  for (std::size_t l = layer_count(); l-- > 0;) {
    const std::size_t n_in = widths_[l];
    const std::size_t n_out = widths_[l + 1];
    const double* w = params_.data() + weight_offsets_[l];
    double* gw = grad.data() + weight_offsets_[l];
    double* gb = grad.data() + bias_offsets_[l];
    const Vector& in = tape.activations[l];
    for (std::size_t r = 0; r < n_out; ++r) {
      const double d = delta[r];
      gb[r] += d;
      if (d == 0.0) continue;
      double* gwr = gw + r * n_in;
      for (std::size_t c = 0; c < n_in; ++c) gwr[c] += d * in[c];
    }
    const bool need_input = l > 0 || !input_grad.empty();
    if (!need_input) break;
    next.assign(n_in, 0.0);
    for (std::size_t r = 0; r < n_out; ++r) {
      const double d = delta[r];
      if (d == 0.0) continue;
      const double* wr = w + r * n_in;
      for (std::size_t c = 0; c < n_in; ++c) next[c] += d * wr[c];
    }
    if (l > 0) {
      // in = tanh(pre), so d/dpre = 1 - in^2
      for (std::size_t c = 0; c < n_in; ++c) next[c] *= 1.0 - in[c] * in[c];
    } else {
      if (input_grad.size() != n_in) throw ShapeError("mlp input gradient buffer has wrong length");
      for (std::size_t c = 0; c < n_in; ++c) input_grad[c] = next[c];
    }
    delta.swap(next);
  }
}

}  // namespace uepo
