// icl-lab: batch front end for the experiments.
//
//   icl-lab <command> [--config <path>] [--seed <u64>] [--out <dir>] [--set key=value ...]

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "icl/config.hpp"
#include "icl/error.hpp"
#include "icl/experiments.hpp"

namespace {

int code(icl::ExitCode c) { return static_cast<int>(c); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-concept in-context learning laboratory"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
  bool quiet = false;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"fig2", "Topic histograms of predictions with and without context"},
      {"claim1", "Readout laws of the closed-form model, with and without context"},
      {"theorem1", "Threshold flags and posterior agreement over an (n1, H, n) grid"},
      {"ablation", "Frozen uniform attention against jointly trained attention"},
      {"compare-prompts", "Stacked against embedding-stacked prompt predictions"},
      {"generate", "Write training, query and context sequences"},
      {"train", "Gradient descent on the masked objective, compared to the closed form"},
      {"solve", "Write the closed-form value matrix"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "key = value configuration file");
    sub->add_option("--seed", seed, "Root random seed");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--set", overrides, "Override one config key (key=value)");
    sub->add_flag("--quiet", quiet, "Do not print the summary");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : code(icl::ExitCode::Usage);
  }

  std::string command;
  for (const auto* sub : app.get_subcommands()) command = sub->get_name();

  if (!config_path.empty() && !std::filesystem::is_regular_file(config_path)) {
    std::cerr << "icl-lab: config file '" << config_path << "' not found\n";
    return code(icl::ExitCode::InputMissing);
  }

  try {
    icl::ExperimentConfig config = config_path.empty() ? icl::ExperimentConfig{} : icl::load_config(config_path);
    if (!overrides.empty()) {
      std::string text;
      for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw icl::ConfigError({"--set expects key=value, got '" + o + "'"});
        text += o.substr(0, eq) + " = " + o.substr(eq + 1) + "\n";
      }
      config = icl::parse_config(text, config);
    }
    icl::validate(config);

    const icl::CommandResult result = icl::run_command(command, config, seed, out_dir);
    if (!quiet) std::cout << result.summary_json;
    for (const auto& c : result.checks)
      std::cerr << (c.pass ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : ": " + c.detail) << '\n';
    return code(result.exit_code());
  } catch (const icl::ConfigError& e) {
    std::cerr << "icl-lab: " << e.what() << '\n';
    return code(icl::ExitCode::ConfigRejected);
  } catch (const icl::TrainingDiverged& e) {
    std::cerr << "icl-lab: " << e.what() << '\n';
    return code(icl::ExitCode::Diverged);
  } catch (const std::exception& e) {
    std::cerr << "icl-lab: " << e.what() << '\n';
    return code(icl::ExitCode::InputMissing);
  }
}
