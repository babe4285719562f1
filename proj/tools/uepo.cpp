#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "uepo/config.hpp"
#include "uepo/error.hpp"
#include "uepo/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"uepo: offline diffusion ensemble to online fine-tuning pipeline"};
  std::string stage;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  std::vector<std::string> choices = uepo::stage_names();
  choices.push_back("all");
  app.add_option("stage", stage, "stage to run")->required()->check(CLI::IsMember(choices));
  app.add_option("--config", config_path, "key = value configuration file")->required();
  app.add_option("--seed", seed, "override the global seed");
  app.add_option("--out", out, "override the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    uepo::RunConfig cfg = uepo::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out = *out;
    cfg.validate();
    const std::filesystem::path dir = out ? std::filesystem::path(*out) : cfg.resolve(cfg.out);
    uepo::DirectoryLock lock(dir);
    uepo::run_stage(stage, cfg, dir, std::cout);
  } catch (const uepo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const uepo::MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
