#include "uepo/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>

#include "uepo/augmentation.hpp"
#include "uepo/dataset.hpp"
#include "uepo/diffusion.hpp"
#include "uepo/dynamics.hpp"
#include "uepo/envs.hpp"
#include "uepo/error.hpp"
#include "uepo/finetune.hpp"
#include "uepo/hash.hpp"
#include "uepo/io.hpp"
#include "uepo/objective.hpp"
#include "uepo/rng.hpp"

namespace uepo {

namespace fs = std::filesystem;

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{
      "gen-data", "train-diffusion", "sample-ensemble", "augment", "train-dynamics",
      "select",   "finetune",        "eval",            "div-check"};
  return names;
}

namespace {

// Artifact name -> stage that writes it.
const std::map<std::string, std::string>& producers() {
  static const std::map<std::string, std::string> m{
      {"dataset.jsonl", "gen-data"},          {"policy.ckpt", "train-diffusion"},
      {"dynamics_init.ckpt", "augment"},      {"d_diff.jsonl", "augment"},
      {"dynamics.ckpt", "train-dynamics"},    {"selection.txt", "select"},
      {"head_distilled.ckpt", "finetune"},    {"head.ckpt", "finetune"}};
  return m;
}

std::string csv_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Stage {
  const RunConfig& cfg;
  fs::path dir;
  std::ostream& log;
  Manifest manifest;
  std::unique_ptr<Environment> env;

  Stage(const std::string& name, const RunConfig& c, fs::path d, std::ostream& l)
      : cfg(c), dir(std::move(d)), log(l), env(make_environment(c.env_name, c.env_sigma)) {
    const auto& names = stage_names();
    const auto idx = static_cast<std::uint64_t>(
        std::find(names.begin(), names.end(), name) - names.begin());
    manifest.stage = name;
    manifest.config_hash = sha256_hex(canonical_config(c));
    manifest.seed = mix_seed(c.seed, idx + 1);
  }

  std::uint64_t seed(std::uint64_t sub) const { return mix_seed(manifest.seed, sub); }

  fs::path input(const std::string& name) {
    const fs::path p = dir / name;
    if (!fs::exists(p)) {
      const auto it = producers().find(name);
      const std::string by = it == producers().end() ? "an earlier stage" : "stage " + it->second;
      throw MissingArtifactError("missing " + p.string() + "; run " + by + " first");
    }
    manifest.inputs[name] = file_sha256(p);
    return p;
  }

  fs::path source(const fs::path& p) {
    if (!fs::exists(p)) throw MissingArtifactError("missing source file " + p.string());
    manifest.sources[p.lexically_normal().generic_string()] = file_sha256(p);
    return p;
  }

  void output(const std::string& name, const std::string& contents) {
    write_file_atomic(dir / name, contents);
    manifest.outputs[name] = sha256_hex(contents);
  }

  fs::path output_path(const std::string& name) { return dir / name; }

  void record_output(const std::string& name) { manifest.outputs[name] = file_sha256(dir / name); }

  TrajectoryDataset dataset(const std::string& name) {
    TrajectoryDataset d = load_dataset(input(name));
    if (d.meta.env != env->name()) {
      throw ConfigError("env.name: config says " + env->name() + " but " + name + " holds " +
                        d.meta.env);
    }
    return d;
  }

  DiffusionPolicy policy() {
    DiffusionPolicy p = load_policy(input("policy.ckpt"));
    if (p.dims().state_dim != env->state_dim() || p.dims().action_dim != env->action_dim()) {
      throw ShapeError("policy.ckpt dims do not match env " + env->name());
    }
    return p;
  }

  void finish() {
    write_file_atomic(manifest_path(dir, manifest.stage), manifest.to_text());
  }
};

void gen_data(Stage& st) {
  const RunConfig& cfg = st.cfg;
  TrajectoryDataset data;
  if (!cfg.data_path.empty()) {
    data = load_dataset(st.source(cfg.resolve(cfg.data_path)));
    if (data.meta.env != st.env->name()) {
      throw ConfigError("data.path: dataset env " + data.meta.env + " does not match env.name");
    }
  } else {
    if (cfg.data_mode_mix.size() != st.env->mode_count()) {
      throw ConfigError("data.mode_mix: needs " + std::to_string(st.env->mode_count()) +
                        " proportions for " + st.env->name());
    }
    Rng rng(st.seed(1));
    data = make_offline_dataset(*st.env, cfg.data_trajectories, cfg.data_mode_mix, rng,
                                cfg.data_action_noise);
  }
  st.output("dataset.jsonl", serialize_dataset(data));
  st.log << "gen-data: " << data.trajectories.size() << " trajectories, "
         << data.transition_count() << " transitions\n";
}

void train_diffusion_stage(Stage& st) {
  const RunConfig& cfg = st.cfg;
  const TrajectoryDataset data = st.dataset("dataset.jsonl");
  const auto windows = make_training_windows(data, cfg.diffusion_horizon);
  if (windows.empty()) throw DegenerateHorizonError("dataset has no windows of the configured horizon");
  Rng rng(st.seed(1));
  DiffusionPolicy policy = DiffusionPolicy::create(
      cfg.diffusion_dims(st.env->action_low(), st.env->action_high(), st.env->state_dim(),
                         st.env->action_dim()),
      make_linear_schedule(cfg.diffusion_k, cfg.diffusion_beta_min, cfg.diffusion_beta_max),
      cfg.diffusion_hidden, rng);
  const auto losses = train_diffusion(policy, windows, cfg.diffusion_train, rng);
  save_policy(st.output_path("policy.ckpt"), policy);
  st.record_output("policy.ckpt");
  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) csv += std::to_string(i) + ',' + csv_double(losses[i]) + '\n';
  st.output("diffusion_loss.csv", csv);
  st.log << "train-diffusion: " << windows.size() << " windows, loss " << losses.front() << " -> "
         << losses.back() << "\n";
}

void sample_ensemble_stage(Stage& st) {
  const RunConfig& cfg = st.cfg;
  const DiffusionPolicy policy = st.policy();
  const TrajectoryDataset data = st.dataset("dataset.jsonl");
  const auto starts = data.initial_states();
  if (starts.empty()) throw ShapeError("dataset has no trajectories");
  const EnsembleSpec spec = cfg.ensemble_spec();
  const auto seqs = sample_ensemble(policy, hold_window(starts.front(), policy.dims().horizon), spec);
  std::string csv = "member,seed,step";
  for (std::size_t c = 0; c < policy.dims().action_dim; ++c) csv += ",a" + std::to_string(c);
  csv += '\n';
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    for (std::size_t t = 0; t < seqs[i].rows(); ++t) {
      csv += std::to_string(i) + ',' + std::to_string(spec.seeds[i]) + ',' + std::to_string(t);
      for (double v : seqs[i].row(t)) csv += ',' + csv_double(v);
      csv += '\n';
    }
  }
  st.output("ensemble.csv", csv);
  std::string div_csv = "i,j,div\n";
  for (const auto& p : pairwise_divergence(seqs)) {
    div_csv += std::to_string(p.i) + ',' + std::to_string(p.j) + ',' + csv_double(p.value) + '\n';
  }
  st.output("ensemble_divergence.csv", div_csv);
  st.log << "sample-ensemble: " << seqs.size() << " sequences";
  if (seqs.size() > 1) st.log << ", min pairwise div " << min_pairwise_divergence(seqs);
  st.log << "\n";
}

GaussianDynamics fit_dynamics(const RunConfig& cfg, const Environment& env,
                              std::span<const Transition> real, std::span<const Transition> synthetic,
                              std::uint64_t seed, DynamicsTrainReport* report) {
  Rng init_rng(mix_seed(seed, 1));
  GaussianDynamics m =
      GaussianDynamics::create(env.state_dim(), env.action_dim(), cfg.dynamics_hidden, init_rng);
  Rng rng(mix_seed(seed, 2));
  DynamicsTrainReport r = train_joint(m, real, synthetic, cfg.dynamics, rng);
  if (report) *report = std::move(r);
  return m;
}

std::string loss_csv(const DynamicsTrainReport& r) {
  std::string csv = "epoch,nll\n0," + csv_double(r.initial_loss) + '\n';
  for (std::size_t i = 0; i < r.epoch_losses.size(); ++i) {
    csv += std::to_string(i + 1) + ',' + csv_double(r.epoch_losses[i]) + '\n';
  }
  return csv;
}

void augment_stage(Stage& st) {
  const RunConfig& cfg = st.cfg;
  const DiffusionPolicy policy = st.policy();
  const TrajectoryDataset data = st.dataset("dataset.jsonl");
  const auto real = transitions_of(data, TransitionSource::kReal);
  DynamicsTrainReport init_report;
  const GaussianDynamics init = fit_dynamics(cfg, *st.env, real, {}, st.seed(1), &init_report);
  save_dynamics(st.output_path("dynamics_init.ckpt"), init);
  st.record_output("dynamics_init.ckpt");
  st.output("dynamics_init_loss.csv", loss_csv(init_report));
  Rng rng(st.seed(2));
  try {
    const AugmentationResult res = build_augmented(*st.env, policy, init, data, cfg.filter, rng);
    st.output("d_diff.jsonl", serialize_dataset(res.synthetic));
    st.output("augment_report.txt", res.report.summary());
    st.output("kl_histogram.csv", res.report.kl_histogram_csv());
    st.log << "augment: " << res.report.summary();
  } catch (const AugmentationStarvationError& e) {
    write_file_atomic(st.output_path("augment_report.txt"), e.report().summary());
    write_file_atomic(st.output_path("kl_histogram.csv"), e.report().kl_histogram_csv());
    throw;
  }
}

void train_dynamics_stage(Stage& st) {
  const RunConfig& cfg = st.cfg;
  const TrajectoryDataset data = st.dataset("dataset.jsonl");
  const TrajectoryDataset synthetic = st.dataset("d_diff.jsonl");
  const auto real = transitions_of(data, TransitionSource::kReal);
  const auto syn = transitions_of(synthetic, TransitionSource::kSynthetic);
  DynamicsTrainReport report;
  const GaussianDynamics m = fit_dynamics(cfg, *st.env, real, syn, st.seed(1), &report);
  save_dynamics(st.output_path("dynamics.ckpt"), m);
  st.record_output("dynamics.ckpt");
  st.output("dynamics_loss.csv", loss_csv(report));
  st.log << "train-dynamics: " << real.size() << " real + " << syn.size()
         << " synthetic transitions, nll " << report.initial_loss << " -> "
         << report.epoch_losses.back() << "\n";
}

void select_stage(Stage& st) {
  const RunConfig& cfg = st.cfg;
  const DiffusionPolicy policy = st.policy();
  const GaussianDynamics model = load_dynamics(st.input("dynamics.ckpt"));
  const TrajectoryDataset data = st.dataset("dataset.jsonl");
  const EnsembleSpec spec = cfg.ensemble_spec();
  const Environment& env = *st.env;
  const RewardFn reward = [&env](std::span<const double> s, std::span<const double> a,
                                 std::span<const double> s2) { return env.reward(s, a, s2); };
  const auto starts = data.initial_states();
  const SelectionResult sel =
      select_policy(policy, spec, model, reward, starts, cfg.select_rollouts, st.seed(1));
  std::string text = "best_index=" + std::to_string(sel.best_index) + "\nbest_seed=" +
                     std::to_string(spec.seeds[sel.best_index]) + "\n";
  for (std::size_t i = 0; i < sel.scores.size(); ++i) {
    text += "score." + std::to_string(i) + "=" + csv_double(sel.scores[i]) + "\n";
  }
  st.output("selection.txt", text);
  st.log << "select: sub-policy " << sel.best_index << " (model return "
         << sel.scores[sel.best_index] << ")\n";
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

std::vector<StateSequence> state_pool(const TrajectoryDataset& data, std::size_t horizon,
                                      std::size_t n, Rng& rng) {
  std::vector<StateSequence> all;
  for (auto& ex : make_training_windows(data, horizon)) all.push_back(std::move(ex.states));
  if (all.size() <= n) return all;
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<StateSequence> out;
  for (std::size_t i : idx) out.push_back(std::move(all[i]));
  return out;
}

void finetune_stage(Stage& st) {
  const RunConfig& cfg = st.cfg;
  const DiffusionPolicy policy = st.policy();
  const TrajectoryDataset data = st.dataset("dataset.jsonl");
  const auto selection = parse_key_values(read_file(st.input("selection.txt")));
  const auto it = selection.find("best_seed");
  if (it == selection.end()) throw FormatError("selection.txt has no best_seed");
  std::uint64_t best_seed = 0;
  const auto [ptr, ec] =
      std::from_chars(it->second.data(), it->second.data() + it->second.size(), best_seed);
  if (ec != std::errc()) throw FormatError("selection.txt best_seed is not an integer");

  Rng rng(st.seed(1));
  const auto pool = state_pool(data, policy.dims().horizon, cfg.distill_pool, rng);
  const DistillResult distilled = distill(policy, best_seed, pool, cfg.distill, rng);
  save_head(st.output_path("head_distilled.ckpt"), distilled.head);
  st.record_output("head_distilled.ckpt");
  std::string report = "mse=" + csv_double(distilled.mse) + "\nepochs=" +
                       std::to_string(distilled.epochs) + "\npool=" + std::to_string(pool.size()) + "\n";
  if (distilled.warning) {
    report += "warning=" + *distilled.warning + "\n";
    st.log << "finetune: warning: " << *distilled.warning << "\n";
  }
  st.output("distill_report.txt", report);

  Rng ppo_rng(st.seed(2));
  try {
    const PpoResult res = ppo_finetune(distilled.head, *st.env, cfg.ppo, cfg.ppo_iterations, ppo_rng);
    save_head(st.output_path("head.ckpt"), res.head);
    st.record_output("head.ckpt");
    save_mlp(st.output_path("value.ckpt"), res.value);
    st.record_output("value.ckpt");
    st.output("return_curve.csv", return_curve_csv(res.curve));
    st.log << "finetune: distill mse " << distilled.mse << ", return "
           << res.curve.front().mean_return << " -> " << res.curve.back().mean_return << "\n";
  } catch (const TrainingDivergenceError& e) {
    save_head(st.output_path("head.ckpt"), e.last_stable());
    throw;
  }
}

void eval_stage(Stage& st) {
  const RunConfig& cfg = st.cfg;
  const GaussianPolicy distilled = load_head(st.input("head_distilled.ckpt"));
  const GaussianPolicy tuned = load_head(st.input("head.ckpt"));
  const DiffusionPolicy policy = st.policy();
  const TrajectoryDataset data = st.dataset("dataset.jsonl");

  const IterationStats before = evaluate_head(distilled, *st.env, cfg.eval_episodes, st.seed(1));
  const IterationStats after = evaluate_head(tuned, *st.env, cfg.eval_episodes, st.seed(1));

  auto examples = make_training_windows(data, policy.dims().horizon);
  Rng rng(st.seed(2));
  std::shuffle(examples.begin(), examples.end(), rng.engine());
  examples.resize(std::min(examples.size(), cfg.objective_batch));
  const std::vector<DiffusionPolicy> members(cfg.ensemble_n, policy);
  const EnsembleObjective obj = ensemble_objective(members, examples, cfg.objective);

  std::string text = "distilled_mean_return=" + csv_double(before.mean_return) +
                     "\ndistilled_std_return=" + csv_double(before.std_return) +
                     "\nfinetuned_mean_return=" + csv_double(after.mean_return) +
                     "\nfinetuned_std_return=" + csv_double(after.std_return) + "\n";
  for (std::size_t i = 0; i < obj.objective.size(); ++i) {
    const std::string k = std::to_string(i);
    text += "objective." + k + "=" + csv_double(obj.objective[i]) + "\nmean_log_prob." + k + "=" +
            csv_double(obj.mean_log_prob[i]) + "\nmean_penalty." + k + "=" +
            csv_double(obj.mean_penalty[i]) + "\n";
  }
  st.output("eval.txt", text);
  st.log << "eval: distilled " << before.mean_return << " +- " << before.std_return
         << ", fine-tuned " << after.mean_return << " +- " << after.std_return << "\n";
}

void div_check_stage(Stage& st) {
  const ActionSequence a = read_sequence_csv(st.source(st.cfg.resolve(st.cfg.divcheck_a)));
  const ActionSequence b = read_sequence_csv(st.source(st.cfg.resolve(st.cfg.divcheck_b)));
  const double d = div(a, b);
  st.output("divcheck.txt", "div=" + csv_double(d) + "\n");
  st.log << "div-check: div = " << csv_double(d) << "\n";
}

void run_one(const std::string& stage, const RunConfig& cfg, const fs::path& dir, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  Stage st(stage, cfg, dir, log);
  if (stage == "gen-data") {
    gen_data(st);
  } else if (stage == "train-diffusion") {
    train_diffusion_stage(st);
  } else if (stage == "sample-ensemble") {
    sample_ensemble_stage(st);
  } else if (stage == "augment") {
    augment_stage(st);
  } else if (stage == "train-dynamics") {
    train_dynamics_stage(st);
  } else if (stage == "select") {
    select_stage(st);
  } else if (stage == "finetune") {
    finetune_stage(st);
  } else if (stage == "eval") {
    eval_stage(st);
  } else {
    div_check_stage(st);
  }
  st.finish();
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_file_atomic(dir / (stage + ".timing"), "wall_seconds=" + csv_double(secs) + "\n");
}

}  // namespace

std::string Manifest::to_text() const {
  std::string out = "stage=" + stage + "\nconfig_hash=" + config_hash + "\nseed=" +
                    std::to_string(seed) + "\n";
  for (const auto& [k, v] : sources) out += "source." + k + "=" + v + "\n";
  for (const auto& [k, v] : inputs) out += "input." + k + "=" + v + "\n";
  for (const auto& [k, v] : outputs) out += "output." + k + "=" + v + "\n";
  return out;
}

Manifest Manifest::parse(const std::string& text) {
  Manifest m;
  bool has_stage = false;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.rfind('=');
    if (eq == std::string::npos) throw FormatError("manifest line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    auto starts = [&](std::string_view p) { return key.rfind(p, 0) == 0; };
    if (key == "stage") {
      m.stage = value;
      has_stage = true;
    } else if (key == "config_hash") {
      m.config_hash = value;
    } else if (key == "seed") {
      m.seed = std::stoull(value);
    } else if (starts("source.")) {
      m.sources[key.substr(7)] = value;
    } else if (starts("input.")) {
      m.inputs[key.substr(6)] = value;
    } else if (starts("output.")) {
      m.outputs[key.substr(7)] = value;
    } else {
      throw FormatError("unknown manifest key " + key);
    }
  }
  if (!has_stage) throw FormatError("manifest has no stage");
  return m;
}

fs::path manifest_path(const fs::path& dir, const std::string& stage) {
  return dir / (stage + ".manifest");
}

void verify_manifest_chain(const fs::path& dir) {
  std::map<std::string, std::string> produced;
  std::vector<Manifest> manifests;
  for (const auto& stage : stage_names()) {
    const fs::path p = manifest_path(dir, stage);
    if (fs::exists(p)) manifests.push_back(Manifest::parse(read_file(p)));
  }
  for (const auto& m : manifests) {
    for (const auto& [name, hash] : m.outputs) produced[name] = hash;
  }
  for (const auto& m : manifests) {
    for (const auto& [name, hash] : m.inputs) {
      const auto it = produced.find(name);
      if (it == produced.end() || it->second != hash) {
        throw Error("manifest chain broken: " + m.stage + " consumed " + name +
                    " with a hash no stage produced");
      }
    }
    for (const auto& [name, hash] : m.outputs) {
      if (file_sha256(dir / name) != hash) {
        throw Error("artifact " + name + " no longer matches the " + m.stage + " manifest");
      }
    }
  }
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".uepo.lock") {
  fs::create_directories(dir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) throw Error("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
  std::fclose(f);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

void run_stage(const std::string& stage, const RunConfig& cfg, const fs::path& dir,
               std::ostream& log) {
  cfg.validate();
  const auto& names = stage_names();
  if (stage == "all") {
    for (const auto& s : names) run_one(s, cfg, dir, log);
    return;
  }
  if (std::find(names.begin(), names.end(), stage) == names.end()) {
    throw ConfigError("unknown stage '" + stage + "'");
  }
  run_one(stage, cfg, dir, log);
}

ActionSequence read_sequence_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  Vector values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    std::size_t n = 0;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      double v = 0.0;
      const auto first = cell.find_first_not_of(' ');
      const char* b = cell.data() + (first == std::string::npos ? cell.size() : first);
      const char* e = cell.data() + cell.size();
      const auto [ptr, ec] = std::from_chars(b, e, v);
      if (ec != std::errc() || ptr != e) throw FormatError(path.string() + ": bad number '" + cell + "'");
      values.push_back(v);
      ++n;
    }
    if (rows == 0) cols = n;
    if (n != cols || n == 0) throw FormatError(path.string() + ": ragged rows");
    ++rows;
  }
  if (rows == 0) throw FormatError(path.string() + ": empty sequence");
  return ActionSequence(rows, cols, std::move(values));
}

}  // namespace uepo
