#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uepo/diffusion.hpp"
#include "uepo/envs.hpp"
#include "uepo/matrix.hpp"

namespace uepo {

class Rng;

enum class TransitionSource { kReal, kSynthetic };

/// Ordered (s_t, a_t, s_{t+1}) triples. Row t of states / actions /
/// next_states holds the t-th transition.
struct Trajectory {
  std::string env;
  std::uint64_t seed = 0;        // generator seed (diffusion sample seed for virtual rollouts)
  std::uint64_t noise_seed = 0;  // environment noise stream
  std::size_t start_step = 0;    // transitions of the noise stream consumed before row 0
  int mode = -1;                 // scripted behavior label, -1 if unknown
  Matrix states;
  Matrix actions;
  Matrix next_states;
  Vector rewards;

  std::size_t length() const { return states.rows(); }
  /// next_states row t equals states row t+1 for every t.
  bool chain_consistent() const;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct DatasetMeta {
  std::string env;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::size_t horizon = 0;
  std::uint64_t generator_seed = 0;
  Vector mode_mix;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct TrajectoryDataset {
  DatasetMeta meta;
  std::vector<Trajectory> trajectories;

  std::size_t transition_count() const;
  /// First state of every trajectory (the initial-state pool).
  std::vector<Vector> initial_states() const;
  /// Throws FormatError on dims inconsistent with meta or non-finite entries.
  void validate() const;

  friend bool operator==(const TrajectoryDataset&, const TrajectoryDataset&) = default;
};

/// Scripted multimodal demonstrations. Each trajectory picks its mode from
/// mode_mix, then follows env.scripted_action plus N(0, action_noise^2)
/// action noise (clipped to the box) for env.horizon() steps.
TrajectoryDataset make_offline_dataset(const Environment& env, std::size_t n_traj,
                                       const Vector& mode_mix, Rng& rng,
                                       double action_noise = 0.05);

/// Re-steps every transition through env with the recorded noise stream and
/// reports whether each s_{t+1} is reproduced bit-exactly.
bool replay_consistent(const Environment& env, const Trajectory& traj);

/// Point-mass coverage-gap variant: drops every transition whose state or
/// next state has y > y_max, splitting trajectories into contiguous pieces.
TrajectoryDataset withhold_region(const TrajectoryDataset& data, double y_max);
/// True when a point-mass state lies in the withheld region.
bool in_gap_region(std::span<const double> s, double y_max);

/// Line-delimited JSON: one header object, then one object per trajectory.
/// Doubles are written in shortest round-trip form.
std::string serialize_dataset(const TrajectoryDataset& data);
TrajectoryDataset parse_dataset(const std::string& text);
void save_dataset(const std::filesystem::path& path, const TrajectoryDataset& data);
TrajectoryDataset load_dataset(const std::filesystem::path& path);

/// T copies of s.
StateSequence hold_window(std::span<const double> s, std::size_t horizon);
/// States t-T+1 .. t of the trajectory, left-padded with its first state.
StateSequence history_window(const Trajectory& traj, std::size_t t, std::size_t horizon);

/// Every length-T action chunk with its state window.
std::vector<TrainingExample> make_training_windows(const TrajectoryDataset& data,
                                                   std::size_t horizon);

}  // namespace uepo
