#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "toycast/checkpoint.hpp"
#include "toycast/cli/config.hpp"
#include "toycast/verification.hpp"

namespace toycast::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitMissingArtifact = 4,
};

struct CommandOptions {
  bool force = false;
  int parallel = 1;
  std::function<void(const std::string&)> log;
};

// Each command reads and writes under config.run_dir():
//   data/         simulate
//   checkpoints/  train (stage1, stage2_seed<s>, scratch_seed<s>, history.csv)
//   forecasts/    forecast (init_<t>/ archives)
//   metrics/      evaluate (metrics.csv, metrics.json), spectra/
//   report/       figures and their CSV sidecars
//   ablate/       ablate (<cell>/..., summary.csv)
void cmd_simulate(const Config& config, const CommandOptions& options = {});
void cmd_train(const Config& config, const CommandOptions& options = {});
void cmd_forecast(const Config& config, const CommandOptions& options = {});
void cmd_evaluate(const Config& config, const CommandOptions& options = {});
void cmd_scorecard(const Config& config, const CommandOptions& options = {});
void cmd_ablate(const Config& config, const CommandOptions& options = {});

/// One row of ablate/summary.csv.
struct AblationResult {
  std::string cell;
  double mean_crps = 0.0;
  double mean_ssr = 0.0;
  double relative_to_baseline = 0.0;  // percent
};
std::vector<AblationResult> read_ablation_summary(const std::filesystem::path& path);

/// Parses argv, dispatches, and maps exceptions to exit codes.
int run(int argc, char** argv);

}  // namespace toycast::cli
