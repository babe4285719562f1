#include "uepo/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "uepo/dataset.hpp"
#include "uepo/io.hpp"
#include "uepo/rng.hpp"

namespace uepo {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// log(1 - tanh(u)^2), stable for large |u|.
double log_one_minus_tanh_sq(double u) {
  const double x = -2.0 * std::abs(u);
  return 2.0 * (std::numbers::ln2 - std::abs(u) - std::log1p(std::exp(x)));
}

}  // namespace

GaussianPolicy::GaussianPolicy(Mlp net, Vector log_std, double action_scale)
    : net_(std::move(net)), log_std_(std::move(log_std)), scale_(action_scale) {
  if (log_std_.size() != net_.output_size()) throw ShapeError("log_std length must equal d_a");
  if (!(scale_ > 0.0)) throw ConfigError("action scale must be positive");
}

GaussianPolicy GaussianPolicy::create(std::size_t state_dim, std::size_t action_dim,
                                      const std::vector<std::size_t>& hidden, double action_scale,
                                      double initial_log_std, Rng& rng) {
  std::vector<std::size_t> widths{state_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(action_dim);
  return GaussianPolicy(Mlp::glorot(std::move(widths), rng), Vector(action_dim, initial_log_std),
                        action_scale);
}

Vector GaussianPolicy::effective_log_std() const {
  Vector out = log_std_;
  for (double& v : out) v = std::clamp(v, kLogStdMin, kLogStdMax);
  return out;
}

Vector GaussianPolicy::pre_squash_mean(std::span<const double> s) const { return net_.forward(s); }

Vector GaussianPolicy::mean_action(std::span<const double> s) const {
  Vector mu = net_.forward(s);
  for (double& v : mu) v = scale_ * std::tanh(v);
  return mu;
}

GaussianPolicy::Draw GaussianPolicy::sample(std::span<const double> s, Rng& rng) const {
  const Vector mu = net_.forward(s);
  const Vector ls = effective_log_std();
  Draw d;
  d.pre_squash.resize(mu.size());
  d.action.resize(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    d.pre_squash[i] = mu[i] + std::exp(ls[i]) * rng.normal();
    d.action[i] = scale_ * std::tanh(d.pre_squash[i]);
  }
  d.log_prob = log_prob(s, d.pre_squash);
  return d;
}

double GaussianPolicy::log_prob(std::span<const double> s, std::span<const double> u) const {
  if (u.size() != action_dim()) throw ShapeError("pre-squash action has the wrong length");
  const Vector mu = net_.forward(s);
  const Vector ls = effective_log_std();
  double lp = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double z = (u[i] - mu[i]) * std::exp(-ls[i]);
    lp += -0.5 * z * z - ls[i] - kHalfLog2Pi;
    lp -= std::log(scale_) + log_one_minus_tanh_sq(u[i]);
  }
  return lp;
}

double GaussianPolicy::action_log_density(std::span<const double> s,
                                          std::span<const double> a) const {
  Vector u(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(std::abs(a[i]) < scale_)) throw ConfigError("action must lie strictly inside the box");
    u[i] = std::atanh(a[i] / scale_);
  }
  return log_prob(s, u);
}

Vector GaussianPolicy::flat_parameters() const {
  Vector p(net_.parameters().begin(), net_.parameters().end());
  p.insert(p.end(), log_std_.begin(), log_std_.end());
  return p;
}

void GaussianPolicy::set_flat_parameters(std::span<const double> p) {
  if (p.size() != parameter_count()) throw ShapeError("head parameter vector has wrong length");
  const std::size_t n = net_.parameter_count();
  std::copy(p.begin(), p.begin() + n, net_.parameters().begin());
  std::copy(p.begin() + n, p.end(), log_std_.begin());
}

void GaussianPolicy::accumulate_log_prob_gradient(std::span<const double> s,
                                                  std::span<const double> u, double coef,
                                                  std::span<double> grad) const {
  if (grad.size() != parameter_count()) throw ShapeError("head gradient buffer has wrong length");
  Mlp::Tape tape;
  const Vector mu = net_.forward(s, tape);
  const std::size_t n = net_.parameter_count();
  Vector upstream(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double ls = std::clamp(log_std_[i], kLogStdMin, kLogStdMax);
    const double inv_var = std::exp(-2.0 * ls);
    const double r = u[i] - mu[i];
    upstream[i] = coef * r * inv_var;
    const bool clamped = log_std_[i] < kLogStdMin || log_std_[i] > kLogStdMax;
    if (!clamped) grad[n + i] += coef * (r * r * inv_var - 1.0);
  }
  net_.accumulate_gradient(tape, upstream, grad.subspan(0, n));
}

void save_head(const std::filesystem::path& path, const GaussianPolicy& head) {
  ByteWriter w;
  write_mlp(w, head.net());
  w.f64s(head.log_std());
  w.f64(head.action_scale());
  write_file_atomic(path, w.bytes());
}

GaussianPolicy load_head(const std::filesystem::path& path) {
  ByteReader r(read_file(path));
  Mlp net = read_mlp(r);
  Vector log_std = r.f64s(net.output_size());
  const double scale = r.f64();
  r.expect_end();
  return GaussianPolicy(std::move(net), std::move(log_std), scale);
}

std::size_t select_index(std::span<const double> scores) {
  if (scores.empty()) throw ShapeError("select_index needs at least one score");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

SelectionResult select_policy(const DiffusionPolicy& policy, const EnsembleSpec& spec,
                              const GaussianDynamics& model, const RewardFn& reward,
                              std::span<const Vector> initial_states, std::size_t n_rollouts,
                              std::uint64_t seed) {
  if (initial_states.empty() || n_rollouts == 0) {
    throw ConfigError("select_policy needs initial states and at least one rollout");
  }
  if (model.state_dim() != policy.dims().state_dim ||
      model.action_dim() != policy.dims().action_dim) {
    throw ShapeError("dynamics model and policy disagree on dims");
  }
  SelectionResult result;
  result.scores.assign(spec.size(), 0.0);
  const std::size_t horizon = policy.dims().horizon;
  for (std::size_t r = 0; r < n_rollouts; ++r) {
    const Vector& s0 = initial_states[r % initial_states.size()];
    const auto seqs = sample_ensemble(policy, hold_window(s0, horizon), spec);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      Rng model_rng(mix_seed(seed, r));
      Vector s = s0;
      double ret = 0.0;
      for (std::size_t t = 0; t < horizon; ++t) {
        const auto a = seqs[i].row(t);
        Vector next = model.sample_next(s, a, model_rng);
        ret += reward(s, a, next);
        s = std::move(next);
      }
      result.scores[i] += ret / static_cast<double>(n_rollouts);
    }
  }
  result.best_index = select_index(result.scores);
  return result;
}

std::vector<Vector> sub_policy_targets(const DiffusionPolicy& policy, std::uint64_t seed,
                                       std::span<const StateSequence> windows) {
  std::vector<Vector> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    const ActionSequence a = sample(policy, w, seed);
    out.emplace_back(a.row(0).begin(), a.row(0).end());
  }
  return out;
}

namespace {

double head_mse(const GaussianPolicy& head, std::span<const Vector> states,
                std::span<const Vector> targets) {
  double total = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const Vector m = head.mean_action(states[i]);
    for (std::size_t c = 0; c < m.size(); ++c) total += (m[c] - targets[i][c]) * (m[c] - targets[i][c]);
  }
  return total / static_cast<double>(states.size() * head.action_dim());
}

}  // namespace

DistillResult fit_head(std::span<const Vector> states, std::span<const Vector> targets,
                       double action_scale, const DistillConfig& cfg, Rng& rng) {
  if (states.empty() || states.size() != targets.size()) {
    throw ShapeError("fit_head needs one target per state and a non-empty pool");
  }
  const std::size_t ds = states.front().size();
  const std::size_t da = targets.front().size();
  GaussianPolicy head =
      GaussianPolicy::create(ds, da, cfg.hidden, action_scale, cfg.initial_log_std, rng);
  Adam opt(head.net().parameter_count(), cfg.adam);
  std::vector<std::size_t> order(states.size());
  std::iota(order.begin(), order.end(), 0);
  Mlp::Tape tape;
  Vector grad(head.net().parameter_count());
  Vector upstream(da);

  DistillResult result{head, head_mse(head, states, targets), 0, std::nullopt};
  while (result.mse >= cfg.target_mse && result.epochs < cfg.max_epochs) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>((end - start) * da);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const Vector mu = head.net().forward(states[i], tape);
        for (std::size_t c = 0; c < da; ++c) {
          const double th = std::tanh(mu[c]);
          const double err = action_scale * th - targets[i][c];
          upstream[c] = 2.0 * err * action_scale * (1.0 - th * th) * inv;
        }
        head.net().accumulate_gradient(tape, upstream, grad);
      }
      opt.step(head.net().parameters(), grad);
    }
    ++result.epochs;
    result.mse = head_mse(head, states, targets);
  }
  result.head = std::move(head);
  if (result.mse >= cfg.target_mse) {
    std::ostringstream msg;
    msg << "distillation stopped at epoch cap with mse " << result.mse << " >= "
        << cfg.target_mse;
    result.warning = msg.str();
  }
  return result;
}

DistillResult distill(const DiffusionPolicy& policy, std::uint64_t seed,
                      std::span<const StateSequence> windows, const DistillConfig& cfg, Rng& rng) {
  if (windows.empty()) throw ShapeError("distill needs a non-empty state pool");
  const auto targets = sub_policy_targets(policy, seed, windows);
  std::vector<Vector> states;
  states.reserve(windows.size());
  for (const auto& w : windows) {
    const auto last = w.row(w.rows() - 1);
    states.emplace_back(last.begin(), last.end());
  }
  const double scale = std::max(std::abs(policy.dims().action_low), std::abs(policy.dims().action_high));
  return fit_head(states, targets, scale, cfg, rng);
}

void PpoConfig::validate() const {
  if (!(clip_ratio > 0.0 && clip_ratio < 1.0)) throw ConfigError("ppo clip_ratio must lie in (0, 1)");
  if (!(discount > 0.0 && discount <= 1.0)) throw ConfigError("ppo discount must lie in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("ppo gae_lambda must lie in [0, 1]");
  if (epochs_per_batch == 0 || batch_episodes == 0 || minibatch_size == 0) {
    throw ConfigError("ppo epochs, batch episodes and minibatch size must be positive");
  }
}

SurrogateResult clipped_surrogate(const GaussianPolicy& head, std::span<const PpoSample> samples,
                                  double clip_ratio) {
  if (samples.empty()) throw ShapeError("surrogate needs samples");
  SurrogateResult out{0.0, Vector(head.parameter_count(), 0.0)};
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (const auto& smp : samples) {
    const double ratio = std::exp(head.log_prob(smp.s, smp.u) - smp.log_prob_old);
    const double a = smp.advantage;
    const double clipped = std::clamp(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio);
    out.value += std::min(ratio * a, clipped * a) * inv;
    const bool inactive = (a > 0.0 && ratio > 1.0 + clip_ratio) || (a < 0.0 && ratio < 1.0 - clip_ratio);
    if (inactive || a == 0.0) continue;
    head.accumulate_log_prob_gradient(smp.s, smp.u, a * ratio * inv, out.gradient);
  }
  return out;
}

Vector gae(std::span<const double> rewards, std::span<const double> values, double discount,
           double lambda) {
  if (values.size() != rewards.size() + 1) throw ShapeError("gae needs one bootstrap value");
  Vector adv(rewards.size());
  double running = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    const double delta = rewards[t] + discount * values[t + 1] - values[t];
    running = delta + discount * lambda * running;
    adv[t] = running;
  }
  return adv;
}

namespace {

struct Episode {
  std::vector<Vector> states;  // horizon + 1 entries
  std::vector<GaussianPolicy::Draw> draws;
  Vector rewards;
  double total() const { return std::accumulate(rewards.begin(), rewards.end(), 0.0); }
};

Episode run_episode(const GaussianPolicy& head, const Environment& env, Rng& rng) {
  Episode ep;
  Vector s = env.reset(rng);
  for (std::size_t t = 0; t < env.horizon(); ++t) {
    auto d = head.sample(s, rng);
    Vector next = env.step(s, d.action, rng);
    ep.rewards.push_back(env.reward(s, d.action, next));
    ep.states.push_back(std::move(s));
    ep.draws.push_back(std::move(d));
    s = std::move(next);
  }
  ep.states.push_back(std::move(s));
  return ep;
}

IterationStats stats_of(const Vector& returns) {
  IterationStats st;
  for (double r : returns) st.mean_return += r / static_cast<double>(returns.size());
  for (double r : returns) {
    st.std_return += (r - st.mean_return) * (r - st.mean_return) / static_cast<double>(returns.size());
  }
  st.std_return = std::sqrt(st.std_return);
  return st;
}

constexpr int kMaxHalvings = 8;

double max_ratio_shift(const GaussianPolicy& head, std::span<const PpoSample> samples) {
  double worst = 0.0;
  for (const auto& smp : samples) {
    const double ratio = std::exp(head.log_prob(smp.s, smp.u) - smp.log_prob_old);
    if (!std::isfinite(ratio)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, std::abs(ratio - 1.0));
  }
  return worst;
}

bool ratios_within(const GaussianPolicy& head, std::span<const PpoSample> samples, double clip) {
  return max_ratio_shift(head, samples) <= clip;
}

}  // namespace

IterationStats evaluate_head(const GaussianPolicy& head, const Environment& env,
                             std::size_t episodes, std::uint64_t seed) {
  Rng rng(seed);
  Vector returns;
  for (std::size_t e = 0; e < episodes; ++e) returns.push_back(run_episode(head, env, rng).total());
  return stats_of(returns);
}

PpoResult ppo_finetune(const GaussianPolicy& head, const Environment& env, const PpoConfig& cfg,
                       std::size_t iterations, Rng& rng) {
  cfg.validate();
  if (head.state_dim() != env.state_dim() || head.action_dim() != env.action_dim()) {
    throw ShapeError("policy head does not match the environment");
  }
  std::vector<std::size_t> vwidths{env.state_dim()};
  vwidths.insert(vwidths.end(), cfg.value_hidden.begin(), cfg.value_hidden.end());
  vwidths.push_back(1);
  PpoResult result{head, Mlp::glorot(vwidths, rng), {}, {}};
  Adam policy_opt(head.parameter_count(), cfg.policy_adam);
  Adam value_opt(result.value.parameter_count(), cfg.value_adam);
  Mlp::Tape tape;

  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<PpoSample> batch;
    Vector returns;
    for (std::size_t e = 0; e < cfg.batch_episodes; ++e) {
      Episode ep = run_episode(result.head, env, rng);
      returns.push_back(ep.total());
      Vector values;
      for (const auto& s : ep.states) values.push_back(result.value.forward(s)[0]);
      const Vector adv = gae(ep.rewards, values, cfg.discount, cfg.gae_lambda);
      for (std::size_t t = 0; t < ep.rewards.size(); ++t) {
        batch.push_back({ep.states[t], ep.draws[t].pre_squash, ep.draws[t].log_prob, adv[t],
                         adv[t] + values[t]});
      }
    }
    result.curve.push_back(stats_of(returns));

    double mean = 0.0;
    double var = 0.0;
    for (const auto& s : batch) mean += s.advantage / static_cast<double>(batch.size());
    for (const auto& s : batch) var += (s.advantage - mean) * (s.advantage - mean) / static_cast<double>(batch.size());
    if (std::sqrt(var) > 1e-8) {
      for (auto& s : batch) s.advantage = (s.advantage - mean) / std::sqrt(var);
    }

    std::vector<std::size_t> order(batch.size());
    std::iota(order.begin(), order.end(), 0);
    bool policy_frozen = false;
    std::vector<PpoSample> mb;
    for (std::size_t epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng.engine());
      for (std::size_t start = 0; start < order.size(); start += cfg.minibatch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.minibatch_size);
        mb.clear();
        for (std::size_t k = start; k < end; ++k) mb.push_back(batch[order[k]]);

        if (!policy_frozen) {
          const SurrogateResult sur = clipped_surrogate(result.head, mb, cfg.clip_ratio);
          if (!std::isfinite(sur.value)) {
            throw TrainingDivergenceError("ppo surrogate became non-finite", result.head);
          }
          const Vector before = result.head.flat_parameters();
          Vector params = before;
          Vector descent(sur.gradient.size());
          for (std::size_t i = 0; i < descent.size(); ++i) descent[i] = -sur.gradient[i];
          policy_opt.step(params, descent);
          // Backtrack along the proposed step until every batch ratio stays
          // inside the clip band; give up on this batch after kMaxHalvings.
          bool accepted = false;
          double scale = 1.0;
          for (int h = 0; h <= kMaxHalvings && !accepted; ++h, scale *= 0.5) {
            Vector trial(before.size());
            for (std::size_t i = 0; i < trial.size(); ++i) {
              trial[i] = before[i] + scale * (params[i] - before[i]);
            }
            result.head.set_flat_parameters(trial);
            accepted = ratios_within(result.head, batch, cfg.clip_ratio);
          }
          if (!accepted) {
            result.head.set_flat_parameters(before);
            policy_frozen = true;
          }
        }

        Vector vgrad(result.value.parameter_count(), 0.0);
        const double inv = 1.0 / static_cast<double>(mb.size());
        for (const auto& smp : mb) {
          const double v = result.value.forward(smp.s, tape)[0];
          const double up = 2.0 * (v - smp.value_target) * inv;
          result.value.accumulate_gradient(tape, std::span<const double>(&up, 1), vgrad);
        }
        value_opt.step(result.value.parameters(), vgrad);
      }
    }
    result.ratio_shift.push_back(max_ratio_shift(result.head, batch));
  }
  return result;
}

std::string return_curve_csv(std::span<const IterationStats> curve) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,mean_return,std_return\n";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out << i << ',' << curve[i].mean_return << ',' << curve[i].std_return << '\n';
  }
  return out.str();
}

}  // namespace uepo
