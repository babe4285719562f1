#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "oracles.hpp"
#include "uepo/dynamics.hpp"
#include "uepo/rng.hpp"

using namespace uepo;

namespace {

double univariate_kl(double mp, double vp, double mq, double vq) {
  return 0.5 * (std::log(vq / vp) + (vp + (mp - mq) * (mp - mq)) / vq - 1.0);
}

TransitionBatch random_batch(std::size_t n, std::size_t ds, std::size_t da, Rng& rng) {
  TransitionBatch b;
  for (std::size_t i = 0; i < n; ++i) {
    Transition t;
    for (std::size_t c = 0; c < ds; ++c) t.s.push_back(rng.normal());
    for (std::size_t c = 0; c < da; ++c) t.a.push_back(rng.normal());
    for (std::size_t c = 0; c < ds; ++c) t.s_next.push_back(rng.normal());
    b.push_back(t);
  }
  return b;
}

}  // namespace

TEST(Predict, ZeroNetAndClamp) {
  GaussianDynamics zero(2, 1, Mlp({3, 4}));
  const TransitionDist d = zero.predict(Vector{1.0, 2.0}, Vector{3.0});
  EXPECT_EQ(d.mean, (Vector{0.0, 0.0}));
  EXPECT_EQ(d.variance, (Vector{1.0, 1.0}));

  Mlp net({3, 4});
  net.parameters()[net.bias_index(0, 2)] = 5.0;
  net.parameters()[net.bias_index(0, 3)] = -50.0;
  const TransitionDist c = GaussianDynamics(2, 1, net).predict(Vector{0, 0}, Vector{0});
  EXPECT_DOUBLE_EQ(c.variance[0], std::exp(2.0));
  EXPECT_DOUBLE_EQ(c.variance[1], std::exp(-10.0));
  EXPECT_THROW(zero.predict(Vector{1.0}, Vector{3.0}), ShapeError);
  EXPECT_THROW(GaussianDynamics(2, 1, Mlp({3, 3})), ShapeError);
}

TEST(Predict, MatchesForwardOracle) {
  Rng rng(1);
  const GaussianDynamics m = GaussianDynamics::create(3, 2, {6}, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector s{rng.normal(), rng.normal(), rng.normal()};
    const Vector a{rng.normal(), rng.normal()};
    const Vector raw = oracle::mlp_forward(m.net(), Vector{s[0], s[1], s[2], a[0], a[1]});
    const TransitionDist d = m.predict(s, a);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(d.mean[i], raw[i], 1e-12);
      EXPECT_NEAR(d.variance[i], std::exp(std::clamp(raw[3 + i], -10.0, 2.0)), 1e-12);
    }
  }
}

TEST(Nll, GaussianAtItsMean) {
  const GaussianDynamics zero(2, 1, Mlp({3, 4}));
  const TransitionBatch b{{{0.3, 0.1}, {0.2}, {0.0, 0.0}, TransitionSource::kReal}};
  EXPECT_NEAR(nll_value(zero, b), 2 * 0.5 * std::log(2 * std::numbers::pi), 1e-12);
  const TransitionBatch one{{{0.0, 0.0}, {0.0}, {1.0, 0.0}, TransitionSource::kReal}};
  const TransitionBatch two{{{0.0, 0.0}, {0.0}, {2.0, 0.0}, TransitionSource::kReal}};
  const double base = nll_value(zero, b);
  EXPECT_NEAR(nll_value(zero, two) - base, 4.0 * (nll_value(zero, one) - base), 1e-12);
  EXPECT_THROW(nll_value(zero, TransitionBatch{}), ShapeError);
}

TEST(Nll, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  GaussianDynamics m = GaussianDynamics::create(2, 1, {5}, rng);
  const TransitionBatch b = random_batch(6, 2, 1, rng);
  const NllResult r = nll(m, b);
  std::vector<double> params(m.net().parameters().begin(), m.net().parameters().end());
  const Vector fd = oracle::central_difference(params, [&] {
    std::copy(params.begin(), params.end(), m.net().parameters().begin());
    return nll_value(m, b);
  });
  EXPECT_LT(oracle::relative_error(r.gradient, fd), 1e-5);
  std::copy(params.begin(), params.end(), m.net().parameters().begin());
  EXPECT_DOUBLE_EQ(r.loss, nll_value(m, b));
}

TEST(Kl, ClosedForms) {
  EXPECT_EQ(gaussian_kl(Vector{0.3}, Vector{2.0}, Vector{0.3}, Vector{2.0}), 0.0);
  EXPECT_DOUBLE_EQ(gaussian_kl(Vector{0.0}, Vector{1.0}, Vector{1.0}, Vector{1.0}), 0.5);
  EXPECT_DOUBLE_EQ(gaussian_kl(Vector{0, 0, 0}, Vector{1, 1, 1}, Vector{1, 0, 0.5}, Vector{1, 1, 1}),
                   0.625);
  EXPECT_THROW(gaussian_kl(Vector{0.0}, Vector{0.0}, Vector{0.0}, Vector{1.0}), ConfigError);
}

TEST(Kl, NonNegativeAndAdditive) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector pm(3), pv(3), qm(3), qv(3);
    double sum = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      pm[i] = rng.normal();
      qm[i] = rng.normal();
      pv[i] = std::exp(rng.normal());
      qv[i] = std::exp(rng.normal());
      sum += univariate_kl(pm[i], pv[i], qm[i], qv[i]);
    }
    const double kl = gaussian_kl(pm, pv, qm, qv);
    ASSERT_GE(kl, 0.0);
    ASSERT_NEAR(kl, sum, 1e-12);
    ASSERT_EQ(gaussian_kl(pm, pv, pm, pv), 0.0);
  }
}

TEST(TrainJoint, EmptySyntheticMatchesRealOnly) {
  Rng data_rng(4);
  const TransitionBatch real = random_batch(50, 2, 1, data_rng);
  Rng init(5);
  const GaussianDynamics start = GaussianDynamics::create(2, 1, {4}, init);
  GaussianDynamics a = start;
  GaussianDynamics b = start;
  Rng ra(6), rb(6);
  const DynamicsTrainConfig cfg{.epochs = 5, .batch_size = 16};
  const auto ra_rep = train_joint(a, real, {}, cfg, ra);
  const auto rb_rep = train_joint(b, real, TransitionBatch{}, cfg, rb);
  EXPECT_EQ(ra_rep.epoch_losses, rb_rep.epoch_losses);
  EXPECT_EQ(a, b);
  EXPECT_THROW(train_joint(a, TransitionBatch{}, real, cfg, ra), ShapeError);
}

TEST(TrainJoint, FitsLinearSystem) {
  // s' = A s + B a + small noise
  Rng rng(7);
  auto step = [](const Vector& s, const Vector& a) {
    return Vector{0.9 * s[0] + 0.2 * s[1] + 0.1 * a[0], -0.1 * s[0] + 0.8 * s[1] + 0.3 * a[0]};
  };
  TransitionBatch data;
  for (int i = 0; i < 2000; ++i) {
    Transition t{{rng.uniform(-1, 1), rng.uniform(-1, 1)}, {rng.uniform(-1, 1)}, {}, TransitionSource::kReal};
    t.s_next = step(t.s, t.a);
    for (double& v : t.s_next) v += 0.01 * rng.normal();
    data.push_back(t);
  }
  GaussianDynamics m = GaussianDynamics::create(2, 1, {16}, rng);
  const auto rep = train_joint(m, data, {}, {.epochs = 60, .batch_size = 32, .adam = {.step_size = 1e-2}}, rng);
  EXPECT_LE(rep.epoch_losses.back(), rep.initial_loss);
  for (double v : rep.epoch_losses) EXPECT_TRUE(std::isfinite(v));
  double err = 0.0;
  for (int i = 0; i < 200; ++i) {
    const Vector s{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Vector a{rng.uniform(-1, 1)};
    const Vector want = step(s, a);
    const TransitionDist d = m.predict(s, a);
    err += std::hypot(d.mean[0] - want[0], d.mean[1] - want[1]) / 200.0;
  }
  EXPECT_LT(err, 0.05);
}

TEST(TrainJoint, Reproducible) {
  Rng data_rng(8);
  const TransitionBatch real = random_batch(40, 2, 1, data_rng);
  const TransitionBatch syn = random_batch(40, 2, 1, data_rng);
  auto run = [&] {
    Rng rng(9);
    GaussianDynamics m = GaussianDynamics::create(2, 1, {4}, rng);
    train_joint(m, real, syn, {.epochs = 3}, rng);
    return m;
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, DynamicsRoundTrip) {
  Rng rng(10);
  const GaussianDynamics m = GaussianDynamics::create(4, 2, {}, rng);
  const auto path = std::filesystem::temp_directory_path() / "uepo_dyn_test.ckpt";
  save_dynamics(path, m);
  EXPECT_EQ(load_dynamics(path), m);
  std::filesystem::remove(path);
}
