#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "toycast/backbone.hpp"
#include "toycast/curriculum.hpp"
#include "toycast/grid.hpp"
#include "toycast/rollout.hpp"
#include "toycast/toyatmos.hpp"
#include "toycast/verification.hpp"

namespace toycast::cli {

namespace fs = std::filesystem;

enum class ValueType { integer, real, boolean, string, int_list, real_list };

struct KeySpec {
  std::string key;
  ValueType type;
  std::string default_value;
  std::string doc;
};

/// Every accepted key with its default and one-line description.
const std::vector<KeySpec>& config_keys();

/// Flat typed key/value configuration. Files use `key = value` lines with
/// `#` comments; strings may be quoted; lists are comma separated,
/// optionally in brackets. Unknown keys and malformed values throw ConfigError.
class Config {
 public:
  Config();

  static Config from_file(const fs::path& path);
  void merge_file(const fs::path& path);
  void set(const std::string& key, const std::string& value);
  /// "key=value"
  void apply_override(const std::string& assignment);

  int64_t get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<int64_t> get_int_list(const std::string& key) const;
  std::vector<double> get_real_list(const std::string& key) const;

  /// All keys, sorted, one `key = value` per line.
  std::string to_toml() const;
  nlohmann::json to_json() const;

  bool operator==(const Config&) const = default;

 private:
  const std::string& raw(const std::string& key) const;
  std::map<std::string, std::string> values_;
};

/// Typed view of a Config.
struct RunConfig {
  std::string run_id;
  fs::path output_root;

  GridSpec grid;
  int64_t n_steps = 0;
  int64_t clock_period = 0;
  uint64_t static_seed = 7;
  DynamicsParams dynamics;

  ModelConfig model;
  TrainingPlan plan;
  bool run_stage2 = true;

  std::string forecast_source;  // stage1 | stage2 | scratch
  int64_t forecast_members = 4;
  int64_t forecast_steps = 8;
  int64_t forecast_inits = 8;
  uint64_t forecast_seed = 0;
  MaskSchedule mask_schedule = MaskSchedule::per_step;
  bool use_ema = true;
  int64_t max_batch = 64;

  int64_t spectrum_lead = 0;  // 0 = last lead
  LatBand lat_band;
  bool default_band = true;

  std::string scorecard_model;
  std::string scorecard_reference;
  SkillMetric scorecard_metric = SkillMetric::crps;

  std::vector<double> ablate_dropout_rates;
  std::vector<int64_t> ablate_ensemble_sizes;
  bool ablate_adaln = true;
  bool ablate_scratch = true;
  bool ablate_adamw = true;

  fs::path run_dir() const { return output_root / run_id; }
};

/// Builds the typed view; TOYCAST_OUTPUT_ROOT overrides `output_root`.
RunConfig resolve(const Config& config);

}  // namespace toycast::cli
