#include "toycast/cli/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <charconv>
#include <limits>
#include <sstream>

#include "toycast/error.hpp"

namespace toycast::cli {

namespace {

using VT = ValueType;

std::string real(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string join_reals(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + real(v[i]);
  return out;
}


}  // namespace

const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys = [] {
    const auto dyn = DynamicsParams::desk_default();
    const auto plan = TrainingPlan::desk();
    const auto model = ModelConfig::desk(dyn.n_channels);
    auto opt = [](const std::string& prefix, const OptimConfig& o) {
      return std::vector<KeySpec>{
          {prefix + ".muon_lr", VT::real, real(o.muon_peak_lr), "peak Muon learning rate"},
          {prefix + ".adamw_lr", VT::real, real(o.adamw_peak_lr), "peak AdamW learning rate"},
          {prefix + ".muon_weight_decay", VT::real, real(o.muon_weight_decay), "Muon decoupled weight decay"},
          {prefix + ".adamw_weight_decay", VT::real, real(o.adamw_weight_decay), "AdamW decoupled weight decay"},
          {prefix + ".warmup_steps", VT::integer, std::to_string(o.warmup_steps), "linear warmup steps (clamped to the stage length)"},
          {prefix + ".momentum", VT::real, real(o.momentum), "Muon momentum"},
          {prefix + ".nesterov", VT::boolean, o.nesterov ? "true" : "false", "Nesterov-style Muon momentum"},
          {prefix + ".ns_iterations", VT::integer, std::to_string(o.ns_iterations), "Newton-Schulz iterations"},
          {prefix + ".ema_decay", VT::real, real(o.ema_decay), "EMA decay of the weights"},
          {prefix + ".use_muon", VT::boolean, o.use_muon ? "true" : "false", "false = AdamW for every parameter"},
          {prefix + ".adamw_output_layer", VT::boolean, o.adamw_for_output_layer ? "true" : "false",
           "route the output convolution to AdamW"},
      };
    };
    std::vector<KeySpec> k{
        {"run_id", VT::string, "default", "run directory name under output_root"},
        {"output_root", VT::string, "runs", "root directory for runs (env TOYCAST_OUTPUT_ROOT overrides)"},

        {"data.n_lat", VT::integer, "32", "grid rows"},
        {"data.n_lon", VT::integer, "64", "grid columns"},
        {"data.layout", VT::string, "cell_centered", "row layout: cell_centered or pole_centered"},
        {"data.n_steps", VT::integer, "5000", "trajectory length"},
        {"data.clock_period", VT::integer, "24", "period of the clock forcing in steps"},
        {"data.static_seed", VT::integer, "7", "seed of the static forcing fields"},
        {"dynamics.n_channels", VT::integer, std::to_string(dyn.n_channels), "number of state channels"},
        {"dynamics.advection_speed", VT::real_list, join_reals(dyn.advection_speed), "cells per step, per channel"},
        {"dynamics.diffusion_coeff", VT::real_list, join_reals(dyn.diffusion_coeff), "diffusion per channel"},
        {"dynamics.forcing_amplitude", VT::real, real(dyn.forcing_amplitude), "stochastic forcing scale"},
        {"dynamics.coupling_strength", VT::real, real(dyn.coupling_strength), "quadratic coupling"},
        {"dynamics.damping", VT::real, real(dyn.damping), "relaxation rate"},
        {"dynamics.seed", VT::integer, "0", "simulation seed"},

        {"model.base_width", VT::integer, std::to_string(model.base_width), "channels at the finest level"},
        {"model.channel_multipliers", VT::int_list, "1,2,3,4", "width multiplier per level"},
        {"model.blocks_per_resolution", VT::integer, std::to_string(model.blocks_per_resolution), "residual blocks per level"},
        {"model.attention_levels", VT::int_list, "0,1", "levels with attention, 0 = coarsest"},
        {"model.dropout_rate", VT::real, "0.1", "dropout probability"},
        {"model.stochastic_mode", VT::string, "dropout", "dropout, adaln_noise or deterministic"},
        {"model.noise_dim", VT::integer, "32", "adaLN noise vector size"},
        {"model.channels_per_head", VT::integer, "64", "attention channels per head"},
        {"model.embedding_multiplier", VT::integer, "4", "adaLN embedding width / base_width"},
        {"model.zero_init_output", VT::boolean, "true", "zero-initialize the output convolution"},
        {"model.init_seed", VT::integer, "0", "parameter initialization seed"},

        {"train.stage1_epochs", VT::integer, std::to_string(plan.stage1_epochs), "Stage-1 (MAE) epochs"},
        {"train.stage2_epochs", VT::integer, std::to_string(plan.stage2_epochs), "Stage-2 (CRPS) epochs"},
        {"train.stage2", VT::boolean, "true", "run Stage 2 (and Stage 3 when deep_ensemble_size > 1)"},
        {"train.from_scratch", VT::boolean, "false", "also train the CRPS-from-scratch ablation"},
        {"train.batch_size", VT::integer, std::to_string(plan.batch_size), "windows per step"},
        {"train.ensemble_size", VT::integer, std::to_string(plan.train_ensemble_size), "members M per Stage-2 step"},
        {"train.deep_ensemble_size", VT::integer, std::to_string(plan.deep_ensemble_size), "Stage-2 runs K"},
        {"train.stage1_seed", VT::integer, "0", "Stage-1 seed"},
        {"train.seeds", VT::int_list, "1,2,3,4", "Stage-2 seeds (at least K)"},
        {"train.steps_per_epoch", VT::integer, "0", "0 = one pass over the training windows"},
        {"train.validate_every", VT::integer, "0", "validation cadence in steps, 0 = per epoch"},
        {"train.val_leads", VT::int_list, "1,2,4", "validation CRPS leads"},
        {"train.val_inits", VT::integer, "8", "validation initial times"},
        {"train.val_members", VT::integer, "0", "validation members, 0 = ensemble_size"},
        {"train.spike_factor", VT::real, "10", "skip steps with loss above this multiple of the running median"},
        {"train.spike_window", VT::integer, "50", "running-median window"},
        {"train.channel_weights", VT::real_list, "", "per-channel loss weights, empty = uniform"},
        {"train.checkpoint_every", VT::integer, "0", "intermediate checkpoint cadence in steps"},

        {"forecast.source", VT::string, "stage2", "checkpoints to roll out: stage1, stage2 or scratch"},
        {"forecast.members_per_checkpoint", VT::integer, "4", "dropout members N per checkpoint"},
        {"forecast.n_steps", VT::integer, "8", "lead steps L"},
        {"forecast.n_inits", VT::integer, "8", "initial times drawn from the test split"},
        {"forecast.seed", VT::integer, "0", "member seed"},
        {"forecast.mask_schedule", VT::string, "per_step", "per_step or frozen"},
        {"forecast.use_ema", VT::boolean, "true", "use EMA weights"},
        {"forecast.max_batch", VT::integer, "64", "samples per forward pass"},

        {"eval.spectrum_lead", VT::integer, "0", "lead for spectra, 0 = last"},
        {"eval.lat_band", VT::real_list, "", "lower,upper latitude of the spectrum band; empty = central half of rows"},

        {"scorecard.model", VT::string, "", "model metrics CSV (default: this run's metrics)"},
        {"scorecard.reference", VT::string, "", "reference metrics CSV"},
        {"scorecard.metric", VT::string, "crps", "crps or rmse"},

        {"ablate.dropout_rates", VT::real_list, "0.05,0.1,0.15", "dropout sweep"},
        {"ablate.ensemble_sizes", VT::int_list, "2,4", "training ensemble sizes"},
        {"ablate.adaln", VT::boolean, "true", "include the adaLN-noise variant"},
        {"ablate.scratch", VT::boolean, "true", "include CRPS-from-scratch"},
        {"ablate.adamw", VT::boolean, "true", "include the AdamW-only optimizer swap"},
    };
    for (auto& s : opt("optim1", plan.stage1_optim)) k.push_back(s);
    for (auto& s : opt("optim2", plan.stage2_optim)) k.push_back(s);
    return k;
  }();
  return keys;
}

namespace {

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : config_keys()) {
    if (k.key == key) return &k;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(std::string v) {
  v = trim(v);
  if (!v.empty() && v.front() == '[') {
    if (v.back() != ']') throw ConfigError("unterminated list: " + v);
    v = v.substr(1, v.size() - 2);
  }
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const auto x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const auto x = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a real number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("key '" + key + "' expects true or false, got '" + v + "'");
}

std::string unquote(std::string v) {
  v = trim(v);
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\''))) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

/// Validates and canonicalizes a value for its key type.
std::string canonical(const KeySpec& spec, const std::string& value) {
  const auto v = trim(value);
  switch (spec.type) {
    case VT::integer: return std::to_string(parse_int(spec.key, v));
    case VT::real: return real(parse_real(spec.key, v));
    case VT::boolean: return parse_bool(spec.key, v) ? "true" : "false";
    case VT::string: return unquote(v);
    case VT::int_list: {
      std::string out;
      for (const auto& item : split_list(v)) out += (out.empty() ? "" : ",") + std::to_string(parse_int(spec.key, item));
      return out;
    }
    case VT::real_list: {
      std::string out;
      for (const auto& item : split_list(v)) out += (out.empty() ? "" : ",") + real(parse_real(spec.key, item));
      return out;
    }
  }
  return v;
}

}  // namespace

Config::Config() {
  for (const auto& k : config_keys()) values_[k.key] = canonical(k, k.default_value);
}

Config Config::from_file(const fs::path& path) {
  Config c;
  c.merge_file(path);
  return c;
}

void Config::merge_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    // Strip comments outside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void Config::set(const std::string& key, const std::string& value) {
  const auto* spec = find_key(key);
  if (!spec) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = canonical(*spec, value);
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& Config::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int64_t Config::get_int(const std::string& key) const { return parse_int(key, raw(key)); }
double Config::get_real(const std::string& key) const { return parse_real(key, raw(key)); }
bool Config::get_bool(const std::string& key) const { return parse_bool(key, raw(key)); }
std::string Config::get_string(const std::string& key) const { return raw(key); }

std::vector<int64_t> Config::get_int_list(const std::string& key) const {
  std::vector<int64_t> out;
  for (const auto& s : split_list(raw(key))) out.push_back(parse_int(key, s));
  return out;
}

std::vector<double> Config::get_real_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : split_list(raw(key))) out.push_back(parse_real(key, s));
  return out;
}

std::string Config::to_toml() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) {
    const auto* spec = find_key(k);
    if (spec->type == VT::string) {
      os << k << " = \"" << v << "\"\n";
    } else if (spec->type == VT::int_list || spec->type == VT::real_list) {
      os << k << " = [" << v << "]\n";
    } else {
      os << k << " = " << v << "\n";
    }
  }
  return os.str();
}

nlohmann::json Config::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

namespace {

OptimConfig optim_from(const Config& c, const std::string& p) {
  OptimConfig o;
  o.muon_peak_lr = c.get_real(p + ".muon_lr");
  o.adamw_peak_lr = c.get_real(p + ".adamw_lr");
  o.muon_weight_decay = c.get_real(p + ".muon_weight_decay");
  o.adamw_weight_decay = c.get_real(p + ".adamw_weight_decay");
  o.warmup_steps = c.get_int(p + ".warmup_steps");
  o.total_steps = std::max<int64_t>(o.warmup_steps, 1);  // set per stage by the trainer
  o.momentum = c.get_real(p + ".momentum");
  o.nesterov = c.get_bool(p + ".nesterov");
  o.ns_iterations = c.get_int(p + ".ns_iterations");
  o.ema_decay = c.get_real(p + ".ema_decay");
  o.use_muon = c.get_bool(p + ".use_muon");
  o.adamw_for_output_layer = c.get_bool(p + ".adamw_output_layer");
  return o;
}

template <typename F>
auto checked(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const InvalidArgument& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace

RunConfig resolve(const Config& c) {
  RunConfig r;
  r.run_id = c.get_string("run_id");
  if (r.run_id.empty() || r.run_id.find('/') != std::string::npos) throw ConfigError("run_id must be a plain name");
  r.output_root = c.get_string("output_root");
  if (const char* env = std::getenv("TOYCAST_OUTPUT_ROOT"); env && *env) r.output_root = env;

  const auto layout = c.get_string("data.layout");
  if (layout != "cell_centered" && layout != "pole_centered") {
    throw ConfigError("data.layout must be cell_centered or pole_centered");
  }
  r.grid = checked("grid", [&] {
    return make_equiangular_grid(c.get_int("data.n_lat"), c.get_int("data.n_lon"),
                                 layout == "cell_centered" ? RowLayout::cell_centered : RowLayout::pole_centered);
  });
  r.n_steps = c.get_int("data.n_steps");
  if (r.n_steps < 3) throw ConfigError("data.n_steps must be >= 3");
  r.clock_period = c.get_int("data.clock_period");
  if (r.clock_period < 1) throw ConfigError("data.clock_period must be >= 1");
  r.static_seed = static_cast<uint64_t>(c.get_int("data.static_seed"));

  r.dynamics.n_channels = c.get_int("dynamics.n_channels");
  r.dynamics.advection_speed = c.get_real_list("dynamics.advection_speed");
  r.dynamics.diffusion_coeff = c.get_real_list("dynamics.diffusion_coeff");
  r.dynamics.forcing_amplitude = c.get_real("dynamics.forcing_amplitude");
  r.dynamics.coupling_strength = c.get_real("dynamics.coupling_strength");
  r.dynamics.damping = c.get_real("dynamics.damping");
  r.dynamics.seed = static_cast<uint64_t>(c.get_int("dynamics.seed"));
  checked("dynamics", [&] { r.dynamics.validate(); return 0; });

  r.model = ModelConfig::desk(r.dynamics.n_channels);
  r.model.base_width = c.get_int("model.base_width");
  r.model.channel_multipliers = c.get_int_list("model.channel_multipliers");
  r.model.blocks_per_resolution = c.get_int("model.blocks_per_resolution");
  r.model.attention_levels = c.get_int_list("model.attention_levels");
  r.model.dropout_rate = c.get_real("model.dropout_rate");
  r.model.stochastic_mode = checked("model.stochastic_mode",
                                    [&] { return stochastic_mode_from_string(c.get_string("model.stochastic_mode")); });
  r.model.noise_dim = c.get_int("model.noise_dim");
  r.model.channels_per_head = c.get_int("model.channels_per_head");
  r.model.embedding_multiplier = c.get_int("model.embedding_multiplier");
  r.model.zero_init_output = c.get_bool("model.zero_init_output");
  r.model.init_seed = static_cast<uint64_t>(c.get_int("model.init_seed"));
  checked("model", [&] { r.model.validate(); return 0; });

  auto& p = r.plan;
  p.stage1_epochs = c.get_int("train.stage1_epochs");
  p.stage2_epochs = c.get_int("train.stage2_epochs");
  p.batch_size = c.get_int("train.batch_size");
  p.train_ensemble_size = c.get_int("train.ensemble_size");
  p.deep_ensemble_size = c.get_int("train.deep_ensemble_size");
  p.stage1_seed = static_cast<uint64_t>(c.get_int("train.stage1_seed"));
  p.seeds.clear();
  for (auto s : c.get_int_list("train.seeds")) p.seeds.push_back(static_cast<uint64_t>(s));
  p.from_scratch_crps = c.get_bool("train.from_scratch");
  p.steps_per_epoch = c.get_int("train.steps_per_epoch");
  p.validate_every = c.get_int("train.validate_every");
  p.val_leads = c.get_int_list("train.val_leads");
  p.val_inits = c.get_int("train.val_inits");
  p.val_members = c.get_int("train.val_members");
  p.spike_factor = c.get_real("train.spike_factor");
  p.spike_window = c.get_int("train.spike_window");
  p.channel_weights = c.get_real_list("train.channel_weights");
  p.stage1_optim = optim_from(c, "optim1");
  p.stage2_optim = optim_from(c, "optim2");
  checked("train", [&] { p.validate(); return 0; });
  r.run_stage2 = c.get_bool("train.stage2");

  r.forecast_source = c.get_string("forecast.source");
  if (r.forecast_source != "stage1" && r.forecast_source != "stage2" && r.forecast_source != "scratch") {
    throw ConfigError("forecast.source must be stage1, stage2 or scratch");
  }
  r.forecast_members = c.get_int("forecast.members_per_checkpoint");
  r.forecast_steps = c.get_int("forecast.n_steps");
  r.forecast_inits = c.get_int("forecast.n_inits");
  if (r.forecast_members < 1 || r.forecast_steps < 1 || r.forecast_inits < 1) {
    throw ConfigError("forecast members, steps and inits must be >= 1");
  }
  r.forecast_seed = static_cast<uint64_t>(c.get_int("forecast.seed"));
  r.mask_schedule = checked("forecast.mask_schedule",
                            [&] { return mask_schedule_from_string(c.get_string("forecast.mask_schedule")); });
  r.use_ema = c.get_bool("forecast.use_ema");
  r.max_batch = c.get_int("forecast.max_batch");
  if (r.max_batch < 1) throw ConfigError("forecast.max_batch must be >= 1");

  r.spectrum_lead = c.get_int("eval.spectrum_lead");
  const auto band = c.get_real_list("eval.lat_band");
  if (!band.empty()) {
    if (band.size() != 2 || !(band[0] < band[1])) throw ConfigError("eval.lat_band needs lower,upper with lower < upper");
    r.lat_band = {band[0], band[1]};
    r.default_band = false;
  } else {
    r.lat_band = default_band(r.grid);
  }

  r.scorecard_model = c.get_string("scorecard.model");
  r.scorecard_reference = c.get_string("scorecard.reference");
  const auto metric = c.get_string("scorecard.metric");
  if (metric != "crps" && metric != "rmse") throw ConfigError("scorecard.metric must be crps or rmse");
  r.scorecard_metric = metric == "crps" ? SkillMetric::crps : SkillMetric::rmse;

  r.ablate_dropout_rates = c.get_real_list("ablate.dropout_rates");
  r.ablate_ensemble_sizes = c.get_int_list("ablate.ensemble_sizes");
  r.ablate_adaln = c.get_bool("ablate.adaln");
  r.ablate_scratch = c.get_bool("ablate.scratch");
  r.ablate_adamw = c.get_bool("ablate.adamw");
  return r;
}

}  // namespace toycast::cli
