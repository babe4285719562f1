#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "uepo/config.hpp"
#include "uepo/error.hpp"
#include "uepo/hash.hpp"
#include "uepo/io.hpp"
#include "uepo/pipeline.hpp"

using namespace uepo;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = UEPO_SOURCE_DIR;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("uepo_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(UEPO_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, DefaultsAndParsing) {
  const RunConfig cfg = parse_config("# comment\nfilter.ratio = 2.5\ndiffusion.hidden = 8, 4\n\nseed = 12\n");
  EXPECT_DOUBLE_EQ(cfg.filter.ratio, 2.5);
  EXPECT_EQ(cfg.diffusion_hidden, (std::vector<std::size_t>{8, 4}));
  EXPECT_EQ(cfg.seed, 12u);
  EXPECT_DOUBLE_EQ(cfg.filter.epsilon, 0.05);
  EXPECT_EQ(cfg.diffusion_k, 50u);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_TRUE(parse_config("dynamics.hidden =\n").dynamics_hidden.empty());
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("nonsense.key = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("filter.ratio = two\n"), ConfigError);
  EXPECT_THROW(parse_config("just text\n"), ConfigError);
  try {
    parse_config("seed = 1\nbogus = 2\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  try {
    parse_config("filter.ratio = 3.5\n").validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("ratio"), std::string::npos);
  }
  EXPECT_THROW(parse_config("filter.epsilon = 0\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("env.name = cartpole\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("data.mode_mix = 0.7, 0.7\n").validate(), ConfigError);
}

TEST(Config, CanonicalFormIgnoresLayoutAndOut) {
  const RunConfig a = parse_config("seed = 3\nfilter.ratio = 2\nout = x\n");
  const RunConfig b = parse_config("# other\nfilter.ratio = 2.0\n\nseed = 3\nout = y\n");
  EXPECT_EQ(canonical_config(a), canonical_config(b));
  EXPECT_NE(canonical_config(a), canonical_config(parse_config("seed = 4\n")));
  const RunConfig loaded = load_config(kSource / "configs/smoke.conf");
  EXPECT_EQ(loaded.base_dir, kSource / "configs");
  EXPECT_NO_THROW(loaded.validate());
  EXPECT_EQ(parse_config(canonical_config(loaded)).seed, loaded.seed);
}

TEST(Hash, KnownDigest) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Manifest, RoundTrip) {
  Manifest m{"augment", "abc", 42, {{"/x/data.jsonl", "11"}}, {{"policy.ckpt", "22"}},
             {{"d_diff.jsonl", "33"}, {"kl_histogram.csv", "44"}}};
  EXPECT_EQ(Manifest::parse(m.to_text()), m);
  EXPECT_THROW(Manifest::parse("stage=a\nnot a line\n"), FormatError);
}

TEST(Lock, Exclusive) {
  const fs::path dir = fresh_dir("lock");
  {
    DirectoryLock lock(dir);
    EXPECT_THROW(DirectoryLock again(dir), Error);
  }
  EXPECT_NO_THROW(DirectoryLock again(dir));
  fs::remove_all(dir);
}

TEST(Pipeline, MissingArtifactNamesStage) {
  const fs::path dir = fresh_dir("missing");
  fs::create_directories(dir);
  const RunConfig cfg = load_config(kSource / "configs/smoke.conf");
  std::ostringstream log;
  try {
    run_stage("select", cfg, dir, log);
    FAIL();
  } catch (const MissingArtifactError& e) {
    EXPECT_NE(std::string(e.what()).find("run stage"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Pipeline, SmokeRunChainAndIdempotence) {
  const fs::path dir = fresh_dir("smoke");
  const RunConfig cfg = load_config(kSource / "configs/smoke.conf");
  std::ostringstream log;
  run_stage("all", cfg, dir, log);
  for (const std::string& stage : stage_names()) {
    EXPECT_TRUE(fs::exists(manifest_path(dir, stage))) << stage;
  }
  EXPECT_NO_THROW(verify_manifest_chain(dir));
  EXPECT_EQ(slurp(dir / "divcheck.txt"), "div=0.75\n");
  EXPECT_NE(log.str().find("div = 0.75"), std::string::npos);

  for (const std::string stage : {"select", "eval"}) {
    const std::string before = slurp(manifest_path(dir, stage));
    run_stage(stage, cfg, dir, log);
    EXPECT_EQ(slurp(manifest_path(dir, stage)), before) << stage;
  }

  const Manifest m = Manifest::parse(slurp(manifest_path(dir, "select")));
  EXPECT_EQ(m.outputs.at("selection.txt"), file_sha256(dir / "selection.txt"));
  EXPECT_EQ(m.config_hash, sha256_hex(canonical_config(cfg)));

  write_file_atomic(dir / "selection.txt", "tampered\n");
  EXPECT_THROW(verify_manifest_chain(dir), Error);
  fs::remove_all(dir);
}

TEST(Pipeline, ReadSequenceCsv) {
  const fs::path dir = fresh_dir("csv");
  fs::create_directories(dir);
  write_file_atomic(dir / "seq.csv", "0.5,1\n-1,2\n");
  const ActionSequence a = read_sequence_csv(dir / "seq.csv");
  EXPECT_EQ(a.rows(), 2u);
  EXPECT_EQ(a.values(), (Vector{0.5, 1.0, -1.0, 2.0}));
  write_file_atomic(dir / "bad.csv", "0.5,1\n-1\n");
  EXPECT_THROW(read_sequence_csv(dir / "bad.csv"), FormatError);
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = fresh_dir("cli");
  const std::string config = (kSource / "configs/smoke.conf").string();
  EXPECT_EQ(run_cli("div-check --config " + config + " --out " + dir.string()), 0);
  EXPECT_EQ(slurp(dir / "divcheck.txt"), "div=0.75\n");
  EXPECT_FALSE(fs::exists(dir / ".uepo.lock"));
  EXPECT_EQ(run_cli("select --config " + config + " --out " + dir.string()), 2);
  EXPECT_EQ(run_cli("fly --config " + config), 1);
  EXPECT_EQ(run_cli("select"), 1);

  const fs::path bad = dir / "bad.conf";
  write_file_atomic(bad, "unknown.key = 1\n");
  EXPECT_EQ(run_cli("select --config " + bad.string() + " --out " + dir.string()), 1);
  write_file_atomic(bad, "filter.ratio = 9\n");
  EXPECT_EQ(run_cli("select --config " + bad.string() + " --out " + dir.string()), 1);
  EXPECT_EQ(run_cli("select --config " + (dir / "absent.conf").string()), 1);
  fs::remove_all(dir);
}
