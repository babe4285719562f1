#include "uepo/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "uepo/error.hpp"
#include "uepo/io.hpp"

namespace uepo {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("cannot parse '" + text + "' as a number");
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::string format_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

ConfigField size_field(std::string key, std::size_t& ref) {
  return {std::move(key), [&ref](const std::string& v) { ref = parse_number<std::size_t>(v); },
          [&ref] { return std::to_string(ref); }};
}

ConfigField u64_field(std::string key, std::uint64_t& ref) {
  return {std::move(key), [&ref](const std::string& v) { ref = parse_number<std::uint64_t>(v); },
          [&ref] { return std::to_string(ref); }};
}

ConfigField double_field(std::string key, double& ref) {
  return {std::move(key), [&ref](const std::string& v) { ref = parse_number<double>(v); },
          [&ref] { return format_double(ref); }};
}

ConfigField string_field(std::string key, std::string& ref) {
  return {std::move(key), [&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }};
}

ConfigField sizes_field(std::string key, std::vector<std::size_t>& ref) {
  return {std::move(key),
          [&ref](const std::string& v) {
            ref.clear();
            for (const auto& item : split_list(v)) ref.push_back(parse_number<std::size_t>(item));
          },
          [&ref] { return format_list(ref); }};
}

ConfigField doubles_field(std::string key, Vector& ref) {
  return {std::move(key),
          [&ref](const std::string& v) {
            ref.clear();
            for (const auto& item : split_list(v)) ref.push_back(parse_number<double>(item));
          },
          [&ref] { return format_list(ref); }};
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

void require_widths(const std::vector<std::size_t>& w, const std::string& field) {
  for (std::size_t x : w) require(x > 0, field, "layer widths must be positive");
}

}  // namespace

std::vector<ConfigField> config_fields(RunConfig& c) {
  return {
      string_field("env.name", c.env_name),
      double_field("env.sigma", c.env_sigma),
      string_field("data.path", c.data_path),
      size_field("data.trajectories", c.data_trajectories),
      doubles_field("data.mode_mix", c.data_mode_mix),
      double_field("data.action_noise", c.data_action_noise),
      size_field("diffusion.k", c.diffusion_k),
      double_field("diffusion.beta_min", c.diffusion_beta_min),
      double_field("diffusion.beta_max", c.diffusion_beta_max),
      size_field("diffusion.horizon", c.diffusion_horizon),
      size_field("diffusion.embed_dim", c.diffusion_embed_dim),
      sizes_field("diffusion.hidden", c.diffusion_hidden),
      size_field("diffusion.steps", c.diffusion_train.steps),
      size_field("diffusion.batch", c.diffusion_train.batch_size),
      double_field("diffusion.lr", c.diffusion_train.adam.step_size),
      size_field("ensemble.n", c.ensemble_n),
      u64_field("ensemble.base_seed", c.ensemble_base_seed),
      double_field("ensemble.tau", c.divergence.tau),
      double_field("ensemble.eta", c.divergence.eta),
      size_field("ensemble.guided_steps", c.divergence.guided_steps),
      double_field("objective.alpha", c.objective.alpha),
      u64_field("objective.path_seed", c.objective.path_seed),
      size_field("objective.batch", c.objective_batch),
      double_field("filter.epsilon", c.filter.epsilon),
      double_field("filter.ratio", c.filter.ratio),
      size_field("filter.max_attempts", c.filter.max_attempts),
      sizes_field("dynamics.hidden", c.dynamics_hidden),
      size_field("dynamics.epochs", c.dynamics.epochs),
      size_field("dynamics.batch", c.dynamics.batch_size),
      double_field("dynamics.lr", c.dynamics.adam.step_size),
      double_field("dynamics.final_lr_fraction", c.dynamics.final_step_fraction),
      size_field("select.rollouts", c.select_rollouts),
      sizes_field("distill.hidden", c.distill.hidden),
      double_field("distill.target_mse", c.distill.target_mse),
      size_field("distill.max_epochs", c.distill.max_epochs),
      size_field("distill.batch", c.distill.batch_size),
      double_field("distill.initial_log_std", c.distill.initial_log_std),
      double_field("distill.lr", c.distill.adam.step_size),
      size_field("distill.pool", c.distill_pool),
      double_field("ppo.clip_ratio", c.ppo.clip_ratio),
      double_field("ppo.discount", c.ppo.discount),
      double_field("ppo.gae_lambda", c.ppo.gae_lambda),
      size_field("ppo.epochs_per_batch", c.ppo.epochs_per_batch),
      size_field("ppo.batch_episodes", c.ppo.batch_episodes),
      size_field("ppo.minibatch", c.ppo.minibatch_size),
      sizes_field("ppo.value_hidden", c.ppo.value_hidden),
      double_field("ppo.policy_lr", c.ppo.policy_adam.step_size),
      double_field("ppo.value_lr", c.ppo.value_adam.step_size),
      size_field("ppo.iterations", c.ppo_iterations),
      size_field("eval.episodes", c.eval_episodes),
      string_field("divcheck.a", c.divcheck_a),
      string_field("divcheck.b", c.divcheck_b),
      u64_field("seed", c.seed),
      string_field("out", c.out),
  };
}

void RunConfig::validate() const {
  require(env_name == "point_mass" || env_name == "pendulum", "env.name",
          "must be point_mass or pendulum");
  require(env_sigma > 0.0, "env.sigma", "must be positive");
  require(data_trajectories > 0, "data.trajectories", "must be positive");
  require(!data_mode_mix.empty(), "data.mode_mix", "needs one proportion per mode");
  double mix = 0.0;
  for (double p : data_mode_mix) {
    require(p >= 0.0, "data.mode_mix", "proportions must be non-negative");
    mix += p;
  }
  require(std::abs(mix - 1.0) < 1e-9, "data.mode_mix", "proportions must sum to 1");
  require(data_action_noise >= 0.0, "data.action_noise", "must be non-negative");
  require(diffusion_k > 0, "diffusion.k", "must be positive");
  require(diffusion_beta_min > 0.0 && diffusion_beta_min <= diffusion_beta_max &&
              diffusion_beta_max < 1.0,
          "diffusion.beta_min/beta_max", "need 0 < beta_min <= beta_max < 1");
  require(diffusion_horizon >= 3, "diffusion.horizon", "must be at least 3");
  require(diffusion_embed_dim > 0 && diffusion_embed_dim % 2 == 0, "diffusion.embed_dim",
          "must be positive and even");
  require_widths(diffusion_hidden, "diffusion.hidden");
  require(diffusion_train.steps > 0, "diffusion.steps", "must be positive");
  require(diffusion_train.batch_size > 0, "diffusion.batch", "must be positive");
  require(diffusion_train.adam.step_size > 0.0, "diffusion.lr", "must be positive");
  require(ensemble_n > 0, "ensemble.n", "must be positive");
  try {
    divergence.validate();
    filter.validate();
    ppo.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("ensemble/filter/ppo: ") + e.what());
  }
  require(objective.alpha >= 0.0, "objective.alpha", "must be non-negative");
  require(objective_batch > 0, "objective.batch", "must be positive");
  require_widths(dynamics_hidden, "dynamics.hidden");
  require(dynamics.epochs > 0, "dynamics.epochs", "must be positive");
  require(dynamics.batch_size > 0, "dynamics.batch", "must be positive");
  require(dynamics.adam.step_size > 0.0, "dynamics.lr", "must be positive");
  require(dynamics.final_step_fraction > 0.0 && dynamics.final_step_fraction <= 1.0,
          "dynamics.final_lr_fraction", "must lie in (0, 1]");
  require(select_rollouts > 0, "select.rollouts", "must be positive");
  require_widths(distill.hidden, "distill.hidden");
  require(distill.target_mse > 0.0, "distill.target_mse", "must be positive");
  require(distill.max_epochs > 0, "distill.max_epochs", "must be positive");
  require(distill.batch_size > 0, "distill.batch", "must be positive");
  require(distill.initial_log_std >= kLogStdMin && distill.initial_log_std <= kLogStdMax,
          "distill.initial_log_std", "must lie in [-5, 1]");
  require(distill.adam.step_size > 0.0, "distill.lr", "must be positive");
  require(distill_pool > 0, "distill.pool", "must be positive");
  require_widths(ppo.value_hidden, "ppo.value_hidden");
  require(ppo.policy_adam.step_size > 0.0, "ppo.policy_lr", "must be positive");
  require(ppo.value_adam.step_size > 0.0, "ppo.value_lr", "must be positive");
  require(ppo_iterations > 0, "ppo.iterations", "must be positive");
  require(eval_episodes > 0, "eval.episodes", "must be positive");
  require(!out.empty(), "out", "must not be empty");
}

DiffusionDims RunConfig::diffusion_dims(double action_low, double action_high,
                                        std::size_t state_dim, std::size_t action_dim) const {
  return DiffusionDims{.horizon = diffusion_horizon,
                       .action_dim = action_dim,
                       .state_dim = state_dim,
                       .embed_dim = diffusion_embed_dim,
                       .action_low = action_low,
                       .action_high = action_high};
}

EnsembleSpec RunConfig::ensemble_spec() const {
  return EnsembleSpec::from_base_seed(ensemble_base_seed, ensemble_n, divergence);
}

std::filesystem::path RunConfig::resolve(const std::string& p) const {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  auto fields = config_fields(cfg);
  std::map<std::string, const ConfigField*> by_key;
  for (const auto& f : fields) by_key[f.key] = &f;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    const std::string where = "line " + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + ": key '" + key + "' given twice");
    try {
      it->second->set(value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + key + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw ConfigError("cannot read config file " + path.string());
  }
  RunConfig cfg = parse_config(read_file(path));
  cfg.base_dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  return cfg;
}

std::string canonical_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  auto fields = config_fields(copy);
  std::sort(fields.begin(), fields.end(),
            [](const ConfigField& a, const ConfigField& b) { return a.key < b.key; });
  std::string out;
  for (const auto& f : fields) {
    if (f.key == "out") continue;
    out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

}  // namespace uepo
