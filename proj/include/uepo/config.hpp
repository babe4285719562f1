#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "uepo/augmentation.hpp"
#include "uepo/diffusion.hpp"
#include "uepo/divergence.hpp"
#include "uepo/dynamics.hpp"
#include "uepo/finetune.hpp"
#include "uepo/objective.hpp"

namespace uepo {

struct RunConfig {
  std::string env_name = "point_mass";
  double env_sigma = 0.01;

  std::string data_path;  // empty: gen-data generates from the scripted controllers
  std::size_t data_trajectories = 200;
  Vector data_mode_mix{0.5, 0.5};
  double data_action_noise = 0.05;

  std::size_t diffusion_k = 50;
  double diffusion_beta_min = 1e-4;
  double diffusion_beta_max = 0.02;
  std::size_t diffusion_horizon = 8;
  std::size_t diffusion_embed_dim = 16;
  std::vector<std::size_t> diffusion_hidden{128, 128};
  DiffusionTrainConfig diffusion_train{.steps = 2000, .batch_size = 128, .adam = {.step_size = 3e-3}};

  std::size_t ensemble_n = 4;
  std::uint64_t ensemble_base_seed = 0;
  DivergenceConfig divergence;

  ObjectiveConfig objective;
  std::size_t objective_batch = 64;

  FilterConfig filter;

  std::vector<std::size_t> dynamics_hidden;  // empty: linear mean and log-variance
  DynamicsTrainConfig dynamics{.epochs = 400, .batch_size = 32, .adam = {.step_size = 1e-2}};

  std::size_t select_rollouts = 16;

  DistillConfig distill;
  std::size_t distill_pool = 2000;

  PpoConfig ppo;
  std::size_t ppo_iterations = 30;

  std::size_t eval_episodes = 32;

  std::string divcheck_a = "fixtures/div_a.csv";
  std::string divcheck_b = "fixtures/div_b.csv";

  std::uint64_t seed = 0;
  std::string out = "runs/default";

  // Directory relative paths in the config resolve against (the config
  // file's directory when parsed from disk).
  std::filesystem::path base_dir = ".";

  /// Throws ConfigError naming the first offending field.
  void validate() const;
  DiffusionDims diffusion_dims(double action_low, double action_high, std::size_t state_dim,
                               std::size_t action_dim) const;
  EnsembleSpec ensemble_spec() const;
  std::filesystem::path resolve(const std::string& p) const;
};

/// Every recognised key with accessors bound to cfg.
struct ConfigField {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};
std::vector<ConfigField> config_fields(RunConfig& cfg);

/// Parses `key = value` lines. Blank lines and lines starting with '#' are
/// skipped. Unknown or repeated keys and malformed values raise ConfigError
/// with the line number.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Sorted key = value rendering of every field except `out`. Two configs
/// with the same canonical text describe the same run.
std::string canonical_config(const RunConfig& cfg);

}  // namespace uepo
