#include <gtest/gtest.h>

#include <cmath>

#include "models.hpp"
#include "uepo/augmentation.hpp"
#include "uepo/rng.hpp"

using namespace uepo;

namespace {

DiffusionPolicy untrained_policy(std::size_t horizon, std::uint64_t seed) {
  Rng rng(seed);
  DiffusionDims dims{.horizon = horizon, .action_dim = 2, .state_dim = 4, .embed_dim = 8};
  return DiffusionPolicy::create(dims, make_linear_schedule(10, 1e-4, 0.02), {16}, rng);
}

}  // namespace

TEST(Filter, StrictThreshold) {
  const FilterConfig cfg;
  EXPECT_EQ(filter(0.0, cfg), FilterDecision::kAccept);
  EXPECT_EQ(filter(0.049999, cfg), FilterDecision::kAccept);
  EXPECT_EQ(filter(0.05, cfg), FilterDecision::kReject);
  EXPECT_EQ(filter(0.5, cfg), FilterDecision::kReject);
  EXPECT_THROW((FilterConfig{.epsilon = 0.0}.validate()), ConfigError);
  EXPECT_THROW((FilterConfig{.ratio = 3.5}.validate()), ConfigError);
  EXPECT_THROW((FilterConfig{.ratio = 1.0}.validate()), ConfigError);
}

TEST(Rollout, DeterministicAndChained) {
  const PointMass2D env;
  const DiffusionPolicy policy = untrained_policy(8, 1);
  const Vector s0{0.01, -0.02, 0.0, 0.0};
  const Trajectory a = rollout_virtual(env, policy, s0, 42);
  EXPECT_EQ(a, rollout_virtual(env, policy, s0, 42));
  EXPECT_NE(a, rollout_virtual(env, policy, s0, 43));
  EXPECT_EQ(a.length(), 8u);
  EXPECT_TRUE(a.chain_consistent());
  EXPECT_TRUE(replay_consistent(env, a));
  EXPECT_EQ(Vector(a.states.row(0).begin(), a.states.row(0).end()), s0);
}

TEST(Rollout, ZeroActionsDriftInClosedForm) {
  const PointMass2D env(0.0);
  const DiffusionPolicy policy = untrained_policy(8, 2);
  Trajectory traj = rollout_virtual(env, policy, Vector{0.0, 0.0, 1.0, -0.5}, 3);
  // Re-step with zero actions to get the drift-only trajectory.
  Rng rng(0);
  Vector s{0.0, 0.0, 1.0, -0.5};
  for (std::size_t t = 0; t < 8; ++t) s = env.step(s, Vector{0.0, 0.0}, rng);
  const double decay = 1.0 - PointMass2D::kDamping;
  double geometric = 0.0;
  for (int t = 0; t < 8; ++t) geometric += std::pow(decay, t);
  EXPECT_NEAR(s[0], 0.1 * geometric, 1e-12);
  EXPECT_NEAR(s[1], -0.05 * geometric, 1e-12);
  EXPECT_NEAR(s[2], std::pow(decay, 8), 1e-12);
  EXPECT_NEAR(s[3], -0.5 * std::pow(decay, 8), 1e-12);
  (void)traj;
}

TEST(TrajectoryKl, ClosedForm) {
  const PointMass2D env(1.0);
  const DiffusionPolicy policy = untrained_policy(6, 4);
  const Trajectory traj = rollout_virtual(env, policy, Vector{0.0, 0.0, 0.0, 0.0}, 5);
  EXPECT_NEAR(trajectory_kl(traj, env, models::exact_point_mass(1.0)), 0.0, 1e-24);
  EXPECT_NEAR(trajectory_kl(traj, env, models::exact_point_mass(1.0, 1.0, 1)), 0.5, 1e-12);
  double previous = std::numeric_limits<double>::infinity();
  for (double offset : {2.0, 1.0, 0.5, 0.25, 0.0}) {
    const double kl = trajectory_kl(traj, env, models::exact_point_mass(1.0, offset, 2));
    EXPECT_LT(kl, previous);
    previous = kl;
  }
  Trajectory empty;
  EXPECT_THROW(trajectory_kl(empty, env, models::exact_point_mass(1.0)), ShapeError);
}

TEST(BuildAugmented, ExactModelHitsRatio) {
  const PointMass2D env;
  Rng data_rng(6);
  const TrajectoryDataset real = make_offline_dataset(env, 10, Vector{0.5, 0.5}, data_rng);
  const DiffusionPolicy policy = untrained_policy(8, 7);
  Rng rng(8);
  const AugmentationResult r =
      build_augmented(env, policy, models::exact_point_mass(0.01), real, FilterConfig{}, rng);
  const std::size_t n = real.transition_count();
  EXPECT_GT(r.report.acceptance_rate(), 0.9);
  EXPECT_GE(r.synthetic.transition_count(), 2 * n);
  EXPECT_LT(r.synthetic.transition_count(), 2 * n + 8);
  EXPECT_EQ(r.report.synthetic_transitions, r.synthetic.transition_count());
  EXPECT_EQ(r.report.kl_scores.size(), r.report.attempts);
  for (const Trajectory& t : r.synthetic.trajectories) {
    EXPECT_LT(trajectory_kl(t, env, models::exact_point_mass(0.01)), 0.05);
    EXPECT_TRUE(t.chain_consistent());
  }
  const auto starts = real.initial_states();
  for (const Trajectory& t : r.synthetic.trajectories) {
    const Vector s0(t.states.row(0).begin(), t.states.row(0).end());
    EXPECT_NE(std::find(starts.begin(), starts.end(), s0), starts.end());
  }
}

TEST(BuildAugmented, CapTruncatesLastTrajectory) {
  const PointMass2D env;
  Rng data_rng(9);
  TrajectoryDataset real = make_offline_dataset(env, 1, Vector{1.0, 0.0}, data_rng);
  // A five-transition real set: target 15 at ratio 3 equals the cap.
  Trajectory& t = real.trajectories[0];
  t.states = Matrix(5, 4, Vector(t.states.values().begin(), t.states.values().begin() + 20));
  t.actions = Matrix(5, 2, Vector(t.actions.values().begin(), t.actions.values().begin() + 10));
  t.next_states = Matrix(5, 4, Vector(t.next_states.values().begin(), t.next_states.values().begin() + 20));
  t.rewards.resize(5);
  const DiffusionPolicy policy = untrained_policy(8, 10);
  Rng rng(11);
  const AugmentationResult r = build_augmented(env, policy, models::exact_point_mass(0.01), real,
                                               FilterConfig{.ratio = 3.0}, rng);
  EXPECT_EQ(r.synthetic.transition_count(), 15u);
  EXPECT_DOUBLE_EQ(r.report.achieved_ratio(), 3.0);
  EXPECT_EQ(r.synthetic.trajectories.back().length(), 7u);
  EXPECT_TRUE(r.synthetic.trajectories.back().chain_consistent());
}

TEST(BuildAugmented, OffsetModelStarves) {
  const PointMass2D env(1.0);
  Rng data_rng(12);
  const TrajectoryDataset real = make_offline_dataset(env, 4, Vector{0.5, 0.5}, data_rng);
  const DiffusionPolicy policy = untrained_policy(8, 13);
  Rng rng(14);
  try {
    build_augmented(env, policy, models::exact_point_mass(1.0, 1.0), real, FilterConfig{}, rng);
    FAIL() << "expected starvation";
  } catch (const AugmentationStarvationError& e) {
    EXPECT_EQ(e.report().accepted, 0u);
    EXPECT_EQ(e.report().attempts, static_cast<std::size_t>(std::ceil(50.0 * 2 * 160 / 8)));
    for (double s : e.report().kl_scores) EXPECT_NEAR(s, 0.5, 1e-12);
  }
}

TEST(BuildAugmented, AcceptanceMonotoneInOffset) {
  const PointMass2D env;
  const DiffusionPolicy policy = untrained_policy(8, 15);
  std::vector<Trajectory> pool;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    pool.push_back(rollout_virtual(env, policy, Vector{0.0, 0.0, 0.0, 0.0}, seed));
  }
  double previous = 1.1;
  for (double offset : {0.0, 0.002, 0.003, 0.004, 0.01}) {
    const GaussianDynamics model = models::exact_point_mass(0.01, offset);
    int accepted = 0;
    for (const Trajectory& t : pool) {
      accepted += filter(trajectory_kl(t, env, model), FilterConfig{}) == FilterDecision::kAccept;
    }
    const double rate = accepted / 200.0;
    EXPECT_LE(rate, previous);
    previous = rate;
  }
}

TEST(BuildAugmented, Reproducible) {
  const PointMass2D env;
  Rng data_rng(16);
  const TrajectoryDataset real = make_offline_dataset(env, 5, Vector{0.5, 0.5}, data_rng);
  const DiffusionPolicy policy = untrained_policy(8, 17);
  auto run = [&] {
    Rng rng(18);
    return build_augmented(env, policy, models::exact_point_mass(0.01), real, FilterConfig{}, rng);
  };
  const AugmentationResult a = run();
  const AugmentationResult b = run();
  EXPECT_EQ(a.synthetic, b.synthetic);
  EXPECT_EQ(a.report.kl_scores, b.report.kl_scores);
}

TEST(Report, SummaryAndHistogram) {
  AugmentationReport r;
  r.attempts = 4;
  r.accepted = 3;
  r.real_transitions = 10;
  r.synthetic_transitions = 20;
  r.kl_scores = {0.0, 0.01, 0.02, 1.0};
  EXPECT_DOUBLE_EQ(r.acceptance_rate(), 0.75);
  EXPECT_DOUBLE_EQ(r.achieved_ratio(), 2.0);
  EXPECT_NE(r.summary().find("accepted = 3"), std::string::npos);
  const std::string csv = r.kl_histogram_csv(2);
  EXPECT_EQ(csv, "bin_lo,bin_hi,count\n0,0.5,3\n0.5,1,1\n");
}
