#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "uepo/config.hpp"
#include "uepo/divergence.hpp"

namespace uepo {

/// Stage names in pipeline order; div-check is standalone.
const std::vector<std::string>& stage_names();

/// Key = value record written next to every stage's outputs. Wall time is
/// kept out of it (see write_timing) so reruns produce identical bytes.
struct Manifest {
  std::string stage;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> sources;  // external files by path
  std::map<std::string, std::string> inputs;   // run-directory artifacts by name
  std::map<std::string, std::string> outputs;

  std::string to_text() const;
  static Manifest parse(const std::string& text);
  friend bool operator==(const Manifest&, const Manifest&) = default;
};

std::filesystem::path manifest_path(const std::filesystem::path& dir, const std::string& stage);

/// Throws Error unless every manifest input hash in dir equals the output
/// hash recorded by an earlier stage for the same artifact, and every
/// recorded output still hashes to its recorded value.
void verify_manifest_chain(const std::filesystem::path& dir);

/// Exclusive claim on an output directory for the lifetime of the object.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Runs one stage (or "all") into dir. Throws ConfigError for bad
/// configuration, MissingArtifactError when a prerequisite is absent and
/// other uepo::Error subclasses for runtime failures.
void run_stage(const std::string& stage, const RunConfig& cfg, const std::filesystem::path& dir,
               std::ostream& log);

/// Reads a sequence written as one CSV row of action components per step.
ActionSequence read_sequence_csv(const std::filesystem::path& path);

}  // namespace uepo
