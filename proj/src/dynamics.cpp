#include "uepo/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "uepo/io.hpp"
#include "uepo/rng.hpp"

namespace uepo {

namespace {
const double kLog2Pi = std::log(2.0 * std::numbers::pi);
}

TransitionBatch transitions_of(const TrajectoryDataset& data, TransitionSource source) {
  TransitionBatch out;
  out.reserve(data.transition_count());
  for (const auto& t : data.trajectories) {
    for (std::size_t i = 0; i < t.length(); ++i) {
      out.push_back({Vector(t.states.row(i).begin(), t.states.row(i).end()),
                     Vector(t.actions.row(i).begin(), t.actions.row(i).end()),
                     Vector(t.next_states.row(i).begin(), t.next_states.row(i).end()), source});
    }
  }
  return out;
}

GaussianDynamics::GaussianDynamics(std::size_t state_dim, std::size_t action_dim, Mlp net)
    : state_dim_(state_dim), action_dim_(action_dim), net_(std::move(net)) {
  if (net_.input_size() != state_dim + action_dim || net_.output_size() != 2 * state_dim) {
    throw ShapeError("dynamics network widths do not match (d_s, d_a)");
  }
}

GaussianDynamics GaussianDynamics::create(std::size_t state_dim, std::size_t action_dim,
                                          const std::vector<std::size_t>& hidden, Rng& rng) {
  std::vector<std::size_t> widths{state_dim + action_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(2 * state_dim);
  return GaussianDynamics(state_dim, action_dim, Mlp::glorot(std::move(widths), rng));
}

Vector GaussianDynamics::input(std::span<const double> s, std::span<const double> a) const {
  if (s.size() != state_dim_ || a.size() != action_dim_) {
    throw ShapeError("dynamics input dims do not match (d_s, d_a)");
  }
  Vector in(s.begin(), s.end());
  in.insert(in.end(), a.begin(), a.end());
  return in;
}

TransitionDist GaussianDynamics::predict(std::span<const double> s,
                                         std::span<const double> a) const {
  const Vector out = net_.forward(input(s, a));
  TransitionDist d{Vector(out.begin(), out.begin() + state_dim_), Vector(state_dim_)};
  for (std::size_t i = 0; i < state_dim_; ++i) {
    d.variance[i] = std::exp(std::clamp(out[state_dim_ + i], kLogVarMin, kLogVarMax));
  }
  return d;
}

Vector GaussianDynamics::sample_next(std::span<const double> s, std::span<const double> a,
                                     Rng& rng) const {
  TransitionDist d = predict(s, a);
  for (std::size_t i = 0; i < state_dim_; ++i) d.mean[i] += std::sqrt(d.variance[i]) * rng.normal();
  return d.mean;
}

namespace {

NllResult nll_impl(const GaussianDynamics& m, std::span<const Transition> batch, bool with_grad) {
  if (batch.empty()) throw ShapeError("nll needs a non-empty batch");
  const std::size_t ds = m.state_dim();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  NllResult out;
  if (with_grad) out.gradient.assign(m.net().parameter_count(), 0.0);
  Mlp::Tape tape;
  Vector in;
  Vector upstream(2 * ds);
  for (const auto& tr : batch) {
    if (tr.s.size() != ds || tr.s_next.size() != ds || tr.a.size() != m.action_dim()) {
      throw ShapeError("transition dims do not match the dynamics model");
    }
    in.assign(tr.s.begin(), tr.s.end());
    in.insert(in.end(), tr.a.begin(), tr.a.end());
    const Vector raw = m.net().forward(in, tape);
    for (std::size_t i = 0; i < ds; ++i) {
      const double lv_raw = raw[ds + i];
      const double lv = std::clamp(lv_raw, kLogVarMin, kLogVarMax);
      const double inv_var = std::exp(-lv);
      const double r = tr.s_next[i] - raw[i];
      out.loss += 0.5 * (kLog2Pi + lv + r * r * inv_var) * inv_n;
      upstream[i] = -r * inv_var * inv_n;
      const bool clamped = lv_raw < kLogVarMin || lv_raw > kLogVarMax;
      upstream[ds + i] = clamped ? 0.0 : 0.5 * (1.0 - r * r * inv_var) * inv_n;
    }
    if (with_grad) m.net().accumulate_gradient(tape, upstream, out.gradient);
  }
  return out;
}

}  // namespace

NllResult nll(const GaussianDynamics& m, std::span<const Transition> batch) {
  return nll_impl(m, batch, true);
}

double nll_value(const GaussianDynamics& m, std::span<const Transition> batch) {
  return nll_impl(m, batch, false).loss;
}

double gaussian_kl(std::span<const double> p_mean, std::span<const double> p_var,
                   std::span<const double> q_mean, std::span<const double> q_var) {
  const std::size_t n = p_mean.size();
  if (p_var.size() != n || q_mean.size() != n || q_var.size() != n) {
    throw ShapeError("gaussian_kl arguments differ in dimension");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(p_var[i] > 0.0) || !(q_var[i] > 0.0)) {
      throw ConfigError("gaussian_kl needs strictly positive variances");
    }
    const double d = p_mean[i] - q_mean[i];
    kl += 0.5 * (std::log(q_var[i] / p_var[i]) + (p_var[i] + d * d) / q_var[i] - 1.0);
  }
  return std::max(kl, 0.0);
}

DynamicsTrainReport train_joint(GaussianDynamics& m, std::span<const Transition> real,
                                std::span<const Transition> synthetic,
                                const DynamicsTrainConfig& cfg, Rng& rng) {
  if (real.empty()) throw ShapeError("train_joint needs real transitions");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(cfg.final_step_fraction > 0.0 && cfg.final_step_fraction <= 1.0)) {
    throw ConfigError("final_step_fraction must lie in (0, 1]");
  }
  TransitionBatch pool(real.begin(), real.end());
  pool.insert(pool.end(), synthetic.begin(), synthetic.end());

  DynamicsTrainReport report;
  report.initial_loss = nll_value(m, pool);
  Adam opt(m.net().parameter_count(), cfg.adam);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  TransitionBatch batch;
  const std::size_t per_epoch = (pool.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total = static_cast<double>(std::max<std::size_t>(1, cfg.epochs * per_epoch - 1));
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(pool[order[i]]);
      const NllResult r = nll(m, batch);
      if (!std::isfinite(r.loss)) throw NonFiniteError("dynamics loss became non-finite");
      const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step++) / total));
      opt.config.step_size =
          cfg.adam.step_size * (cfg.final_step_fraction + (1.0 - cfg.final_step_fraction) * cosine);
      opt.step(m.net().parameters(), r.gradient);
    }
    report.epoch_losses.push_back(nll_value(m, pool));
  }
  return report;
}

void save_dynamics(const std::filesystem::path& path, const GaussianDynamics& m) {
  ByteWriter w;
  write_mlp(w, m.net());
  w.u32(static_cast<std::uint32_t>(m.state_dim()));
  w.u32(static_cast<std::uint32_t>(m.action_dim()));
  write_file_atomic(path, w.bytes());
}

GaussianDynamics load_dynamics(const std::filesystem::path& path) {
  ByteReader r(read_file(path));
  Mlp net = read_mlp(r);
  const std::size_t ds = r.u32();
  const std::size_t da = r.u32();
  r.expect_end();
  return GaussianDynamics(ds, da, std::move(net));
}

}  // namespace uepo
