#include <iostream>
#include <mutex>

#include <CLI11.hpp>

#include "toycast/cli/commands.hpp"
#include "toycast/error.hpp"

namespace toycast::cli {

int run(int argc, char** argv) {
  CLI::App app{"toycast: toy-planet ensemble forecasting pipeline"};
  app.fallthrough();
  app.require_subcommand(0, 1);

  std::string config_path;
  std::vector<std::string> overrides;
  bool force = false;
  int parallel = 1;
  bool dump_config = false;
  bool list_keys = false;
  bool quiet = false;
  app.add_option("-c,--config", config_path, "flat key = value config file");
  app.add_option("--set", overrides, "override a config key (key=value), repeatable");
  app.add_flag("--force", force, "overwrite existing outputs of the command");
  app.add_option("--parallel", parallel, "concurrent Stage-2 runs / ablation cells")->check(CLI::PositiveNumber);
  app.add_flag("--dump-config", dump_config, "print the resolved configuration and exit");
  app.add_flag("--list-keys", list_keys, "print every config key with its default and description");
  app.add_flag("-q,--quiet", quiet, "suppress progress messages");

  using Fn = void (*)(const Config&, const CommandOptions&);
  const std::vector<std::tuple<std::string, std::string, Fn>> commands{
      {"simulate", "generate and store a toy trajectory", cmd_simulate},
      {"train", "Stage 1, then Stage 2 / deep ensemble / from-scratch per config", cmd_train},
      {"forecast", "roll out ensembles from checkpoints over test-split init times", cmd_forecast},
      {"evaluate", "CRPS, RMSE, spread, SSR and spectra of the forecasts", cmd_evaluate},
      {"scorecard", "relative-skill tables and figures between two metric sets", cmd_scorecard},
      {"ablate", "dropout, ensemble-size, adaLN, from-scratch and optimizer ablations", cmd_ablate},
  };
  std::vector<std::pair<CLI::App*, Fn>> subs;
  for (const auto& [name, help, fn] : commands) subs.emplace_back(app.add_subcommand(name, help), fn);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  std::mutex log_mutex;
  CommandOptions options;
  options.force = force;
  options.parallel = parallel;
  if (!quiet) {
    options.log = [&](const std::string& m) {
      std::lock_guard lock(log_mutex);
      std::cerr << m << '\n';
    };
  }

  try {
    if (list_keys) {
      for (const auto& k : config_keys()) std::cout << k.key << " = " << k.default_value << "    # " << k.doc << '\n';
      return kExitOk;
    }
    Config config;
    if (!config_path.empty()) config.merge_file(config_path);
    for (const auto& o : overrides) config.apply_override(o);
    resolve(config);
    if (dump_config) {
      std::cout << config.to_toml();
      return kExitOk;
    }
    for (const auto& [sub, fn] : subs) {
      if (sub->parsed()) {
        fn(config, options);
        return kExitOk;
      }
    }
    std::cerr << app.help();
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return kExitMissingArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace toycast::cli
