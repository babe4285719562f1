#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "models.hpp"
#include "oracles.hpp"
#include "uepo/dataset.hpp"
#include "uepo/finetune.hpp"
#include "uepo/rng.hpp"

using namespace uepo;

namespace {

GaussianPolicy random_head(std::size_t ds, std::size_t da, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  GaussianPolicy head = GaussianPolicy::create(ds, da, {5}, scale, -0.7, rng);
  Vector p = head.flat_parameters();
  for (std::size_t i = head.net().parameter_count(); i < p.size(); ++i) p[i] = rng.uniform(-1.0, 0.0);
  head.set_flat_parameters(p);
  return head;
}

// Samples whose ratio against `head` is exp(shift).
std::vector<PpoSample> samples_with_shift(const GaussianPolicy& head, const std::vector<double>& shifts,
                                          const std::vector<double>& advantages, Rng& rng) {
  std::vector<PpoSample> out;
  for (std::size_t i = 0; i < shifts.size(); ++i) {
    PpoSample smp;
    for (std::size_t d = 0; d < head.state_dim(); ++d) smp.s.push_back(rng.normal());
    smp.u = head.sample(smp.s, rng).pre_squash;
    smp.log_prob_old = head.log_prob(smp.s, smp.u) - shifts[i];
    smp.advantage = advantages[i];
    out.push_back(smp);
  }
  return out;
}

DiffusionPolicy small_policy(std::size_t horizon, std::uint64_t seed) {
  Rng rng(seed);
  DiffusionDims dims{.horizon = horizon, .action_dim = 2, .state_dim = 4, .embed_dim = 8};
  return DiffusionPolicy::create(dims, make_linear_schedule(10, 1e-4, 0.02), {16}, rng);
}

}  // namespace

TEST(SelectIndex, TieBreakAndInvariance) {
  EXPECT_EQ(select_index(Vector{3.0, 3.0, 1.0}), 0u);
  EXPECT_EQ(select_index(Vector{-7.0}), 0u);
  EXPECT_EQ(select_index(Vector{1.0, 2.0, 2.0}), 1u);
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    Vector scores(6);
    for (double& v : scores) v = std::round(rng.normal() * 3.0);
    const double a = std::exp(rng.normal());
    const double b = rng.normal() * 10.0;
    Vector mapped = scores;
    for (double& v : mapped) v = a * v + b;
    ASSERT_EQ(select_index(mapped), select_index(scores));
  }
}

TEST(SelectPolicy, SingleMemberAndPermutation) {
  const PointMass2D env;
  const DiffusionPolicy policy = small_policy(6, 2);
  const GaussianDynamics model = models::exact_point_mass(0.01);
  const RewardFn reward = [&](auto s, auto a, auto n) { return env.reward(s, a, n); };
  const std::vector<Vector> starts{{0.0, 0.0, 0.0, 0.0}, {0.02, -0.01, 0.0, 0.0}};
  const DivergenceConfig unguided{.eta = 0.0};

  const auto one = select_policy(policy, EnsembleSpec::from_base_seed(3, 1, unguided), model, reward,
                                 starts, 4, 9);
  EXPECT_EQ(one.best_index, 0u);
  EXPECT_EQ(one.scores.size(), 1u);

  const EnsembleSpec spec{{11, 22, 33, 44}, unguided};
  const EnsembleSpec permuted{{33, 11, 44, 22}, unguided};
  const auto a = select_policy(policy, spec, model, reward, starts, 4, 9);
  const auto b = select_policy(policy, permuted, model, reward, starts, 4, 9);
  const std::vector<std::size_t> where{2, 0, 3, 1};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(b.scores[i], a.scores[where[i]]);
  EXPECT_EQ(permuted.seeds[b.best_index], spec.seeds[a.best_index]);
  EXPECT_EQ(a.scores, select_policy(policy, spec, model, reward, starts, 4, 9).scores);
}

TEST(Head, SquashedDensityIntegratesToOne) {
  for (double scale : {1.0, 2.0}) {
    GaussianPolicy head = random_head(2, 1, 4, scale);
    for (int trial = 0; trial < 4; ++trial) {
      const Vector s{0.3 * trial, -0.5};
      constexpr int n = 200000;
      const double h = 2.0 * scale / n;
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        const double a = -scale + (i + 0.5) * h;
        total += std::exp(head.action_log_density(s, Vector{a})) * h;
      }
      EXPECT_NEAR(total, 1.0, 1e-3);
    }
  }
}

TEST(Head, LogStdClamp) {
  Rng rng(5);
  GaussianPolicy head = GaussianPolicy::create(2, 2, {4}, 1.0, -1.0, rng);
  EXPECT_EQ(head.effective_log_std(), (Vector{-1.0, -1.0}));
  Vector p = head.flat_parameters();
  p[p.size() - 2] = -9.0;
  p[p.size() - 1] = 3.0;
  head.set_flat_parameters(p);
  EXPECT_EQ(head.effective_log_std(), (Vector{-5.0, 1.0}));
}

TEST(Head, LogProbGradient) {
  GaussianPolicy head = random_head(3, 2, 6);
  Rng rng(7);
  const Vector s{0.1, -0.4, 0.9};
  const Vector u = head.sample(s, rng).pre_squash;
  Vector grad(head.parameter_count(), 0.0);
  head.accumulate_log_prob_gradient(s, u, 1.0, grad);
  const Vector flat = head.flat_parameters();
  std::vector<double> params(flat.begin(), flat.end());
  const Vector fd = oracle::central_difference(params, [&] {
    GaussianPolicy h = head;
    h.set_flat_parameters(params);
    return h.log_prob(s, u);
  });
  EXPECT_LT(oracle::relative_error(grad, fd), 1e-6);
}

TEST(Head, CheckpointRoundTrip) {
  const GaussianPolicy head = random_head(4, 2, 8, 2.0);
  const auto path = std::filesystem::temp_directory_path() / "uepo_head_test.ckpt";
  save_head(path, head);
  EXPECT_EQ(load_head(path), head);
  std::filesystem::remove(path);
}

TEST(Surrogate, GradientMatchesFiniteDifferences) {
  const GaussianPolicy head = random_head(3, 2, 9);
  Rng rng(10);
  // Mix of unclipped samples and samples clipped against their advantage.
  const auto samples = samples_with_shift(head, {0.05, -0.1, 0.0, 0.4, -0.5, 0.12},
                                          {1.0, -0.5, 2.0, 1.5, -1.0, -0.3}, rng);
  const SurrogateResult r = clipped_surrogate(head, samples, 0.2);
  const Vector flat = head.flat_parameters();
  std::vector<double> params(flat.begin(), flat.end());
  const Vector fd = oracle::central_difference(params, [&] {
    GaussianPolicy h = head;
    h.set_flat_parameters(params);
    return clipped_surrogate(h, samples, 0.2).value;
  }, 1e-6);
  EXPECT_LT(oracle::relative_error(r.gradient, fd), 1e-5);
}

TEST(Surrogate, ZeroAdvantageAndClipRule) {
  const GaussianPolicy head = random_head(3, 2, 11);
  Rng rng(12);
  const auto zero = samples_with_shift(head, {0.0, 0.1, -0.3}, {0.0, 0.0, 0.0}, rng);
  const SurrogateResult z = clipped_surrogate(head, zero, 0.2);
  EXPECT_EQ(z.value, 0.0);
  for (double g : z.gradient) EXPECT_EQ(g, 0.0);

  // ratio e^0.4 > 1.2 with A > 0, ratio e^-0.4 < 0.8 with A < 0: both clipped.
  const auto clipped = samples_with_shift(head, {0.4, -0.4}, {1.0, -1.0}, rng);
  const SurrogateResult c = clipped_surrogate(head, clipped, 0.2);
  for (double g : c.gradient) EXPECT_EQ(g, 0.0);
  EXPECT_DOUBLE_EQ(c.value, 0.5 * (1.2 - 0.8));

  // The opposite sides stay active.
  const auto active = samples_with_shift(head, {-0.4, 0.4}, {1.0, -1.0}, rng);
  const SurrogateResult act = clipped_surrogate(head, active, 0.2);
  EXPECT_GT(std::inner_product(act.gradient.begin(), act.gradient.end(), act.gradient.begin(), 0.0), 0.0);
}

TEST(Gae, MatchesDiscountedSumOfResiduals) {
  const Vector rewards{1.0, -0.5, 0.25, 2.0, 0.0};
  const Vector values{0.3, 0.1, -0.2, 0.5, 0.7, 0.4};
  const double g = 0.99;
  const double l = 0.95;
  const Vector adv = gae(rewards, values, g, l);
  for (std::size_t t = 0; t < rewards.size(); ++t) {
    double want = 0.0;
    for (std::size_t k = t; k < rewards.size(); ++k) {
      const double delta = rewards[k] + g * values[k + 1] - values[k];
      want += std::pow(g * l, double(k - t)) * delta;
    }
    EXPECT_NEAR(adv[t], want, 1e-12);
  }
  EXPECT_THROW(gae(rewards, Vector(5), g, l), ShapeError);
}

TEST(Distill, ConstantTarget) {
  Rng rng(13);
  std::vector<Vector> states, targets;
  for (int i = 0; i < 256; ++i) {
    states.push_back({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
    targets.push_back({0.3, -0.5});
  }
  DistillConfig cfg;
  cfg.target_mse = 1e-4;
  const DistillResult r = fit_head(states, targets, 1.0, cfg, rng);
  EXPECT_LT(r.mse, 1e-3);
  EXPECT_FALSE(r.warning.has_value());
  EXPECT_EQ(r.head.effective_log_std(), (Vector{-1.0, -1.0}));
  const Vector probe = r.head.mean_action(Vector{0.5, 0.5, -0.5, 0.0});
  EXPECT_NEAR(probe[0], 0.3, 0.05);
  EXPECT_NEAR(probe[1], -0.5, 0.05);
}

TEST(Distill, WarnsWhenCapHit) {
  Rng rng(14);
  std::vector<Vector> states, targets;
  for (int i = 0; i < 64; ++i) {
    states.push_back({rng.normal()});
    targets.push_back({rng.uniform(-1.0, 1.0)});
  }
  const DistillResult r = fit_head(states, targets, 1.0, {.hidden = {2}, .max_epochs = 3}, rng);
  ASSERT_TRUE(r.warning.has_value());
  EXPECT_EQ(r.epochs, 3u);
  EXPECT_THROW(fit_head({}, {}, 1.0, {}, rng), ShapeError);
}

TEST(Distill, BimodalHeldOut) {
  const PointMass2D env;
  Rng data_rng(15);
  const TrajectoryDataset data = make_offline_dataset(env, 60, Vector{0.5, 0.5}, data_rng);
  const TrajectoryDataset held = make_offline_dataset(env, 20, Vector{0.5, 0.5}, data_rng);
  Rng rng(16);
  DiffusionPolicy policy = DiffusionPolicy::create(
      {.horizon = 4, .action_dim = 2, .state_dim = 4, .embed_dim = 16},
      make_linear_schedule(50, 1e-4, 0.02), {64, 64}, rng);
  train_diffusion(policy, make_training_windows(data, 4), {.steps = 1500, .batch_size = 64,
                                                           .adam = {.step_size = 3e-3}}, rng);
  std::vector<StateSequence> pool, test;
  for (const auto& ex : make_training_windows(data, 4)) pool.push_back(ex.states);
  for (const auto& ex : make_training_windows(held, 4)) test.push_back(ex.states);
  const std::uint64_t seed = 1234;
  Rng fit_rng(17);
  const DistillResult r = distill(policy, seed, pool, {}, fit_rng);
  const std::vector<Vector> want = sub_policy_targets(policy, seed, test);
  double mae = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto last = test[i].row(test[i].rows() - 1);
    const Vector got = r.head.mean_action(last);
    for (std::size_t d = 0; d < 2; ++d) mae += std::abs(got[d] - want[i][d]);
  }
  mae /= 2.0 * static_cast<double>(test.size());
  EXPECT_LT(mae, 0.15);

  Rng again(17);
  EXPECT_EQ(distill(policy, seed, pool, {}, again).head, r.head);
}

TEST(Ppo, RatioBoundAndReproducibility) {
  const PointMass2D env;
  const GaussianPolicy head = random_head(4, 2, 18);
  PpoConfig cfg;
  cfg.batch_episodes = 4;
  cfg.epochs_per_batch = 4;
  cfg.policy_adam.step_size = 1e-2;
  Rng a(19), b(19);
  const PpoResult r = ppo_finetune(head, env, cfg, 3, a);
  EXPECT_EQ(r.curve.size(), 3u);
  ASSERT_EQ(r.ratio_shift.size(), 3u);
  for (double shift : r.ratio_shift) EXPECT_LE(shift, cfg.clip_ratio);
  EXPECT_NE(r.head, head);
  const PpoResult again = ppo_finetune(head, env, cfg, 3, b);
  EXPECT_EQ(again.head, r.head);
  EXPECT_EQ(return_curve_csv(r.curve).substr(0, 30), "iteration,mean_return,std_retu");
  EXPECT_THROW((PpoConfig{.clip_ratio = 1.0}.validate()), ConfigError);
  EXPECT_THROW((PpoConfig{.discount = 0.0}.validate()), ConfigError);
}

TEST(Ppo, EvaluateIsSeeded) {
  const PointMass2D env;
  const GaussianPolicy head = random_head(4, 2, 20);
  const IterationStats x = evaluate_head(head, env, 5, 7);
  const IterationStats y = evaluate_head(head, env, 5, 7);
  EXPECT_EQ(x.mean_return, y.mean_return);
  EXPECT_LT(x.mean_return, 0.0);
  EXPECT_GT(x.std_return, 0.0);
}
