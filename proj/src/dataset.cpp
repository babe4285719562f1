#include "uepo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "uepo/io.hpp"
#include "uepo/rng.hpp"

namespace uepo {

using nlohmann::json;

bool Trajectory::chain_consistent() const {
  for (std::size_t t = 0; t + 1 < length(); ++t) {
    for (std::size_t c = 0; c < states.cols(); ++c) {
      if (next_states(t, c) != states(t + 1, c)) return false;
    }
  }
  return true;
}

std::size_t TrajectoryDataset::transition_count() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.length();
  return n;
}

std::vector<Vector> TrajectoryDataset::initial_states() const {
  std::vector<Vector> out;
  for (const auto& t : trajectories) {
    if (t.length() > 0) out.emplace_back(t.states.row(0).begin(), t.states.row(0).end());
  }
  return out;
}

void TrajectoryDataset::validate() const {
  for (const auto& t : trajectories) {
    const std::size_t n = t.length();
    if (t.states.cols() != meta.state_dim || t.next_states.cols() != meta.state_dim ||
        t.actions.cols() != meta.action_dim || t.actions.rows() != n ||
        t.next_states.rows() != n || t.rewards.size() != n) {
      throw FormatError("trajectory dims inconsistent with dataset metadata");
    }
    if (!t.states.all_finite() || !t.actions.all_finite() || !t.next_states.all_finite()) {
      throw FormatError("trajectory contains non-finite values");
    }
  }
}

TrajectoryDataset make_offline_dataset(const Environment& env, std::size_t n_traj,
                                       const Vector& mode_mix, Rng& rng, double action_noise) {
  if (mode_mix.size() != env.mode_count()) {
    throw ConfigError("mode_mix needs " + std::to_string(env.mode_count()) + " entries");
  }
  double total = 0.0;
  for (double p : mode_mix) {
    if (!(p >= 0.0)) throw ConfigError("mode_mix entries must be >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("mode_mix must sum to 1");

  TrajectoryDataset data;
  data.meta = {env.name(), env.state_dim(), env.action_dim(), env.horizon(), 0, mode_mix};
  const std::size_t horizon = env.horizon();
  for (std::size_t n = 0; n < n_traj; ++n) {
    Trajectory traj;
    traj.env = env.name();
    traj.seed = rng.next_u64();
    traj.noise_seed = rng.next_u64();
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t mode = mode_mix.size() - 1;
    for (std::size_t m = 0; m < mode_mix.size(); ++m) {
      acc += mode_mix[m];
      if (u < acc) {
        mode = m;
        break;
      }
    }
    traj.mode = static_cast<int>(mode);
    traj.states = Matrix(horizon, env.state_dim());
    traj.actions = Matrix(horizon, env.action_dim());
    traj.next_states = Matrix(horizon, env.state_dim());
    traj.rewards.resize(horizon);

    Rng init_rng(traj.seed);
    Rng action_rng(mix_seed(traj.seed, 1));
    Rng env_rng(traj.noise_seed);
    Vector s = env.reset(init_rng);
    for (std::size_t t = 0; t < horizon; ++t) {
      Vector a = env.scripted_action(s, mode);
      for (double& v : a) {
        v = std::clamp(v + action_noise * action_rng.normal(), env.action_low(), env.action_high());
      }
      Vector next = env.step(s, a, env_rng);
      std::copy(s.begin(), s.end(), traj.states.row(t).begin());
      std::copy(a.begin(), a.end(), traj.actions.row(t).begin());
      std::copy(next.begin(), next.end(), traj.next_states.row(t).begin());
      traj.rewards[t] = env.reward(s, a, next);
      s = std::move(next);
    }
    data.trajectories.push_back(std::move(traj));
  }
  return data;
}

bool replay_consistent(const Environment& env, const Trajectory& traj) {
  Rng env_rng(traj.noise_seed);
  for (std::size_t skip = 0; skip < traj.start_step * env.state_dim(); ++skip) env_rng.normal();
  for (std::size_t t = 0; t < traj.length(); ++t) {
    const Vector next = env.step(traj.states.row(t), traj.actions.row(t), env_rng);
    for (std::size_t c = 0; c < next.size(); ++c) {
      if (next[c] != traj.next_states(t, c)) return false;
    }
  }
  return true;
}

bool in_gap_region(std::span<const double> s, double y_max) { return s[1] > y_max; }

namespace {

Trajectory slice(const Trajectory& src, std::size_t begin, std::size_t end) {
  Trajectory out;
  out.env = src.env;
  out.seed = src.seed;
  out.noise_seed = src.noise_seed;
  out.start_step = src.start_step + begin;
  out.mode = src.mode;
  const std::size_t n = end - begin;
  out.states = Matrix(n, src.states.cols());
  out.actions = Matrix(n, src.actions.cols());
  out.next_states = Matrix(n, src.next_states.cols());
  for (std::size_t t = 0; t < n; ++t) {
    std::ranges::copy(src.states.row(begin + t), out.states.row(t).begin());
    std::ranges::copy(src.actions.row(begin + t), out.actions.row(t).begin());
    std::ranges::copy(src.next_states.row(begin + t), out.next_states.row(t).begin());
    out.rewards.push_back(src.rewards[begin + t]);
  }
  return out;
}

}  // namespace

TrajectoryDataset withhold_region(const TrajectoryDataset& data, double y_max) {
  TrajectoryDataset out;
  out.meta = data.meta;
  for (const auto& traj : data.trajectories) {
    std::size_t t = 0;
    while (t < traj.length()) {
      auto kept = [&](std::size_t i) {
        return !in_gap_region(traj.states.row(i), y_max) &&
               !in_gap_region(traj.next_states.row(i), y_max);
      };
      if (!kept(t)) {
        ++t;
        continue;
      }
      std::size_t end = t;
      while (end < traj.length() && kept(end)) ++end;
      out.trajectories.push_back(slice(traj, t, end));
      t = end;
    }
  }
  return out;
}

namespace {

json matrix_json(const Matrix& m) { return json(m.values()); }

Matrix matrix_from_json(const json& j, std::size_t rows, std::size_t cols) {
  Vector v = j.get<Vector>();
  if (v.size() != rows * cols) throw FormatError("trajectory array has the wrong length");
  return Matrix(rows, cols, std::move(v));
}

}  // namespace

std::string serialize_dataset(const TrajectoryDataset& data) {
  std::ostringstream out;
  json header = {{"format", "uepo-trajectories"},
                 {"version", 1},
                 {"env", data.meta.env},
                 {"state_dim", data.meta.state_dim},
                 {"action_dim", data.meta.action_dim},
                 {"horizon", data.meta.horizon},
                 {"generator_seed", data.meta.generator_seed},
                 {"mode_mix", data.meta.mode_mix},
                 {"count", data.trajectories.size()}};
  out << header.dump() << '\n';
  for (const auto& t : data.trajectories) {
    json rec = {{"env", t.env},
                {"seed", t.seed},
                {"noise_seed", t.noise_seed},
                {"start_step", t.start_step},
                {"mode", t.mode},
                {"length", t.length()},
                {"states", matrix_json(t.states)},
                {"actions", matrix_json(t.actions)},
                {"next_states", matrix_json(t.next_states)},
                {"rewards", t.rewards}};
    out << rec.dump() << '\n';
  }
  return out.str();
}

TrajectoryDataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset file is empty");
  TrajectoryDataset data;
  std::size_t count = 0;
  try {
    const json header = json::parse(line);
    if (header.at("format") != "uepo-trajectories" || header.at("version") != 1) {
      throw FormatError("not a uepo trajectory dataset");
    }
    data.meta.env = header.at("env").get<std::string>();
    data.meta.state_dim = header.at("state_dim").get<std::size_t>();
    data.meta.action_dim = header.at("action_dim").get<std::size_t>();
    data.meta.horizon = header.at("horizon").get<std::size_t>();
    data.meta.generator_seed = header.at("generator_seed").get<std::uint64_t>();
    data.meta.mode_mix = header.at("mode_mix").get<Vector>();
    count = header.at("count").get<std::size_t>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json rec = json::parse(line);
      Trajectory t;
      t.env = rec.at("env").get<std::string>();
      t.seed = rec.at("seed").get<std::uint64_t>();
      t.noise_seed = rec.at("noise_seed").get<std::uint64_t>();
      t.start_step = rec.at("start_step").get<std::size_t>();
      t.mode = rec.at("mode").get<int>();
      const auto n = rec.at("length").get<std::size_t>();
      t.states = matrix_from_json(rec.at("states"), n, data.meta.state_dim);
      t.actions = matrix_from_json(rec.at("actions"), n, data.meta.action_dim);
      t.next_states = matrix_from_json(rec.at("next_states"), n, data.meta.state_dim);
      t.rewards = rec.at("rewards").get<Vector>();
      data.trajectories.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed dataset: ") + e.what());
  }
  if (data.trajectories.size() != count) throw FormatError("dataset record count mismatch");
  data.validate();
  return data;
}

void save_dataset(const std::filesystem::path& path, const TrajectoryDataset& data) {
  write_file_atomic(path, serialize_dataset(data));
}

TrajectoryDataset load_dataset(const std::filesystem::path& path) {
  return parse_dataset(read_file(path));
}

StateSequence hold_window(std::span<const double> s, std::size_t horizon) {
  StateSequence w(horizon, s.size());
  for (std::size_t r = 0; r < horizon; ++r) std::ranges::copy(s, w.row(r).begin());
  return w;
}

StateSequence history_window(const Trajectory& traj, std::size_t t, std::size_t horizon) {
  StateSequence w(horizon, traj.states.cols());
  for (std::size_t r = 0; r < horizon; ++r) {
    const std::size_t back = horizon - 1 - r;
    const std::size_t idx = t >= back ? t - back : 0;
    std::ranges::copy(traj.states.row(idx), w.row(r).begin());
  }
  return w;
}

std::vector<TrainingExample> make_training_windows(const TrajectoryDataset& data,
                                                   std::size_t horizon) {
  std::vector<TrainingExample> out;
  for (const auto& traj : data.trajectories) {
    if (traj.length() < horizon) continue;
    for (std::size_t t = 0; t + horizon <= traj.length(); ++t) {
      ActionSequence a(horizon, traj.actions.cols());
      for (std::size_t r = 0; r < horizon; ++r) {
        std::ranges::copy(traj.actions.row(t + r), a.row(r).begin());
      }
      out.push_back({history_window(traj, t, horizon), std::move(a)});
    }
  }
  return out;
}

}  // namespace uepo
