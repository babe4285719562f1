#include "uepo/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "uepo/io.hpp"
#include "uepo/rng.hpp"
#include "uepo/time_embedding.hpp"

namespace uepo {

NoiseSchedule make_linear_schedule(std::size_t k, double beta_min, double beta_max) {
  if (k == 0) throw ConfigError("schedule needs k >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw ConfigError("schedule needs 0 < beta_min <= beta_max < 1");
  }
  Vector beta(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double frac = k == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(k - 1);
    beta[i] = beta_min + (beta_max - beta_min) * frac;
  }
  return schedule_from_betas(std::move(beta));
}

NoiseSchedule schedule_from_betas(Vector beta) {
  if (beta.empty()) throw ConfigError("schedule needs k >= 1");
  NoiseSchedule s;
  s.k = beta.size();
  s.alpha.resize(s.k);
  s.alpha_bar.resize(s.k);
  double running = 1.0;
  for (std::size_t i = 0; i < s.k; ++i) {
    if (!(beta[i] > 0.0 && beta[i] < 1.0)) throw ConfigError("schedule beta outside (0, 1)");
    s.alpha[i] = 1.0 - beta[i];
    running *= s.alpha[i];
    s.alpha_bar[i] = running;
  }
  s.beta = std::move(beta);
  return s;
}

ActionSequence q_sample(const ActionSequence& a0, std::size_t t, const Matrix& eps,
                        const NoiseSchedule& sched) {
  require_same_shape(a0, eps, "q_sample");
  if (t >= sched.k) throw ShapeError("q_sample step " + std::to_string(t) + " out of range");
  const double signal = std::sqrt(sched.alpha_bar[t]);
  const double noise = std::sqrt(1.0 - sched.alpha_bar[t]);
  ActionSequence out(a0.rows(), a0.cols());
  auto o = out.flat();
  auto x = a0.flat();
  auto e = eps.flat();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = signal * x[i] + noise * e[i];
  return out;
}

DiffusionPolicy::DiffusionPolicy(DiffusionDims dims, NoiseSchedule schedule, Mlp denoiser)
    : dims_(dims), schedule_(std::move(schedule)), denoiser_(std::move(denoiser)) {
  if (dims_.horizon == 0 || dims_.action_dim == 0 || dims_.state_dim == 0) {
    throw ConfigError("diffusion dims must be positive");
  }
  if (dims_.embed_dim == 0 || dims_.embed_dim % 2 != 0) {
    throw ConfigError("diffusion embed_dim must be even and positive");
  }
  if (!(dims_.action_low < dims_.action_high)) throw ConfigError("empty action box");
  if (denoiser_.input_size() != dims_.denoiser_input() ||
      denoiser_.output_size() != dims_.denoiser_output()) {
    throw ShapeError("denoiser widths do not match the diffusion dims");
  }
}

DiffusionPolicy DiffusionPolicy::create(DiffusionDims dims, NoiseSchedule schedule,
                                        const std::vector<std::size_t>& hidden, Rng& rng) {
  std::vector<std::size_t> widths{dims.denoiser_input()};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(dims.denoiser_output());
  return DiffusionPolicy(dims, std::move(schedule), Mlp::glorot(std::move(widths), rng));
}

void DiffusionPolicy::check_actions(const ActionSequence& a) const {
  if (a.rows() != dims_.horizon || a.cols() != dims_.action_dim) {
    throw ShapeError("action sequence " + shape_string(a) + ", expected " +
                     std::to_string(dims_.horizon) + "x" + std::to_string(dims_.action_dim));
  }
}

void DiffusionPolicy::check_states(const StateSequence& s) const {
  if (s.rows() != dims_.horizon || s.cols() != dims_.state_dim) {
    throw ShapeError("state sequence " + shape_string(s) + ", expected " +
                     std::to_string(dims_.horizon) + "x" + std::to_string(dims_.state_dim));
  }
}

Vector DiffusionPolicy::denoiser_input(const ActionSequence& a_t, const StateSequence& s,
                                       std::size_t t) const {
  check_actions(a_t);
  check_states(s);
  if (t >= schedule_.k) throw ShapeError("diffusion step " + std::to_string(t) + " out of range");
  Vector in;
  in.reserve(dims_.denoiser_input());
  in.insert(in.end(), a_t.flat().begin(), a_t.flat().end());
  in.insert(in.end(), s.flat().begin(), s.flat().end());
  const Vector emb = time_embedding(t, schedule_.k, dims_.embed_dim);
  in.insert(in.end(), emb.begin(), emb.end());
  return in;
}

Matrix DiffusionPolicy::predict_noise(const ActionSequence& a_t, const StateSequence& s,
                                      std::size_t t) const {
  return Matrix(dims_.horizon, dims_.action_dim, denoiser_.forward(denoiser_input(a_t, s, t)));
}

std::vector<NoiseDraw> draw_noise(const DiffusionPolicy& policy, std::size_t count, Rng& rng) {
  std::vector<NoiseDraw> draws(count);
  for (auto& d : draws) {
    d.step = rng.index(policy.schedule().k);
    d.eps = Matrix::normal(policy.dims().horizon, policy.dims().action_dim, rng);
  }
  return draws;
}

LossAndGradient denoising_loss(const DiffusionPolicy& policy,
                               std::span<const TrainingExample> batch,
                               std::span<const NoiseDraw> draws) {
  if (batch.empty()) throw ShapeError("denoising_loss needs a non-empty batch");
  if (draws.size() != batch.size()) throw ShapeError("one noise draw per example required");
  const Mlp& net = policy.denoiser();
  const double n = static_cast<double>(policy.dims().denoiser_output());
  const double scale = 1.0 / (n * static_cast<double>(batch.size()));

  LossAndGradient out{0.0, Vector(net.parameter_count(), 0.0)};
  Mlp::Tape tape;
  Vector upstream(policy.dims().denoiser_output());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ex = batch[b];
    const auto& draw = draws[b];
    const ActionSequence noisy = q_sample(ex.actions, draw.step, draw.eps, policy.schedule());
    const Vector pred = net.forward(policy.denoiser_input(noisy, ex.states, draw.step), tape);
    const auto eps = draw.eps.flat();
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double r = pred[i] - eps[i];
      out.loss += r * r * scale;
      upstream[i] = 2.0 * r * scale;
    }
    net.accumulate_gradient(tape, upstream, out.gradient);
  }
  return out;
}

LossAndGradient denoising_loss(const DiffusionPolicy& policy,
                               std::span<const TrainingExample> batch, Rng& rng) {
  const auto draws = draw_noise(policy, batch.size(), rng);
  return denoising_loss(policy, batch, draws);
}

ActionSequence reverse_mean(const DiffusionPolicy& policy, const ActionSequence& a_t,
                            const StateSequence& s, std::size_t t) {
  const NoiseSchedule& sched = policy.schedule();
  const Matrix eps_pred = policy.predict_noise(a_t, s, t);
  const double coef = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
  ActionSequence mean(a_t.rows(), a_t.cols());
  auto m = mean.flat();
  auto x = a_t.flat();
  auto e = eps_pred.flat();
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (x[i] - coef * e[i]) * inv_sqrt_alpha;
  return mean;
}

ActionSequence reverse_step(const DiffusionPolicy& policy, const ActionSequence& a_t,
                            const StateSequence& s, std::size_t t, Rng& rng) {
  ActionSequence out = reverse_mean(policy, a_t, s, t);
  if (t > 0) {
    const double sd = std::sqrt(policy.schedule().beta[t]);
    for (double& v : out.flat()) v += sd * rng.normal();
  }
  return out;
}

namespace {

void clip_to_box(ActionSequence& a, const DiffusionDims& dims) {
  for (double& v : a.flat()) v = std::clamp(v, dims.action_low, dims.action_high);
}

// Guidance noise stream for sub-policy seed `seed`.
constexpr std::uint64_t kGuidanceStream = 0x67756964616e6365ULL;

}  // namespace

ActionSequence initial_noise(const DiffusionPolicy& policy, std::uint64_t seed) {
  Rng rng(seed);
  return Matrix::normal(policy.dims().horizon, policy.dims().action_dim, rng);
}

ActionSequence sample(const DiffusionPolicy& policy, const StateSequence& s, std::uint64_t seed) {
  policy.check_states(s);
  Rng rng(seed);
  ActionSequence a = Matrix::normal(policy.dims().horizon, policy.dims().action_dim, rng);
  for (std::size_t t = policy.schedule().k; t-- > 0;) a = reverse_step(policy, a, s, t, rng);
  clip_to_box(a, policy.dims());
  return a;
}

EnsembleSpec EnsembleSpec::from_base_seed(std::uint64_t base_seed, std::size_t n,
                                          DivergenceConfig divergence) {
  EnsembleSpec spec;
  spec.divergence = divergence;
  for (std::size_t i = 0; i < n; ++i) spec.seeds.push_back(mix_seed(base_seed, i));
  return spec;
}

void EnsembleSpec::validate() const {
  if (seeds.empty()) throw ConfigError("ensemble needs at least one seed");
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (std::size_t j = i + 1; j < seeds.size(); ++j) {
      if (seeds[i] == seeds[j]) throw ConfigError("ensemble seeds must be pairwise distinct");
    }
  }
  divergence.validate();
}

std::vector<ActionSequence> sample_ensemble(const DiffusionPolicy& policy, const StateSequence& s,
                                            const EnsembleSpec& spec) {
  spec.validate();
  policy.check_states(s);
  const std::size_t k = policy.schedule().k;
  const std::size_t guided = std::min(spec.divergence.guided_steps, k);
  std::vector<ActionSequence> out;
  out.reserve(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) {
    Rng rng(spec.seeds[i]);
    Rng guide_rng(mix_seed(spec.seeds[i], kGuidanceStream));
    ActionSequence a = Matrix::normal(policy.dims().horizon, policy.dims().action_dim, rng);
    const std::span<const ActionSequence> predecessors(out.data(), out.size());
    for (std::size_t t = k; t-- > 0;) {
      a = reverse_step(policy, a, s, t, rng);
      if (t < guided) a = guide(a, predecessors, spec.divergence, guide_rng);
    }
    clip_to_box(a, policy.dims());
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<double> train_diffusion(DiffusionPolicy& policy,
                                    std::span<const TrainingExample> data,
                                    const DiffusionTrainConfig& cfg, Rng& rng) {
  if (data.empty()) throw ShapeError("train_diffusion needs data");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  Adam opt(policy.denoiser().parameter_count(), cfg.adam);
  std::vector<double> losses;
  losses.reserve(cfg.steps);
  std::vector<TrainingExample> batch(cfg.batch_size);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (auto& ex : batch) ex = data[rng.index(data.size())];
    const auto lg = denoising_loss(policy, batch, rng);
    if (!std::isfinite(lg.loss)) throw NonFiniteError("diffusion loss became non-finite");
    opt.step(policy.denoiser().parameters(), lg.gradient);
    losses.push_back(lg.loss);
  }
  return losses;
}

void save_policy(const std::filesystem::path& path, const DiffusionPolicy& policy) {
  ByteWriter w;
  write_mlp(w, policy.denoiser());
  const auto& d = policy.dims();
  w.u32(static_cast<std::uint32_t>(d.horizon));
  w.u32(static_cast<std::uint32_t>(d.action_dim));
  w.u32(static_cast<std::uint32_t>(d.state_dim));
  w.u32(static_cast<std::uint32_t>(d.embed_dim));
  w.f64(d.action_low);
  w.f64(d.action_high);
  w.u32(static_cast<std::uint32_t>(policy.schedule().k));
  w.f64s(policy.schedule().beta);
  write_file_atomic(path, w.bytes());
}

DiffusionPolicy load_policy(const std::filesystem::path& path) {
  ByteReader r(read_file(path));
  Mlp net = read_mlp(r);
  DiffusionDims d;
  d.horizon = r.u32();
  d.action_dim = r.u32();
  d.state_dim = r.u32();
  d.embed_dim = r.u32();
  d.action_low = r.f64();
  d.action_high = r.f64();
  const std::uint32_t k = r.u32();
  NoiseSchedule sched = schedule_from_betas(r.f64s(k));
  r.expect_end();
  return DiffusionPolicy(d, std::move(sched), std::move(net));
}

}  // namespace uepo
