#include "toycast/cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>
#include <mutex>
#include <sstream>

#include "toycast/array_io.hpp"
#include "toycast/curriculum.hpp"
#include "toycast/error.hpp"
#include "toycast/report.hpp"
#include "toycast/rollout.hpp"

namespace toycast::cli {

namespace {

void note(const CommandOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

/// Empties `dir` for a fresh write, refusing when it already holds results.
void claim_output(const fs::path& dir, bool force, const std::string& what) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) {
      throw ConfigError(dir.string() + " already contains " + what + "; rerun with --force to overwrite");
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

void write_command_manifest(const fs::path& dir, const std::string& command, const Config& config,
                            nlohmann::json extra = nlohmann::json::object()) {
  extra["command"] = command;
  extra["resolved_config"] = config.to_json();
  io::write_json(dir / "command.json", extra);
  write_text(dir.parent_path() / "resolved_config.toml", config.to_toml());
}

fs::path require(const fs::path& path, const std::string& artifact, const std::string& producer) {
  if (!fs::exists(path)) {
    throw MissingArtifact(artifact + " not found at " + path.string() + " (produced by `toycast " + producer + "`)");
  }
  return path;
}

struct Loaded {
  Trajectory trajectory;
  TrajectoryManifest manifest;
};

Loaded load_data(const fs::path& data_dir) {
  require(data_dir / "manifest.json", "trajectory", "simulate");
  return {load_trajectory(data_dir), read_trajectory_manifest(data_dir)};
}

std::string seed_label(const std::string& stage, uint64_t seed) { return stage + "_seed" + std::to_string(seed); }

std::vector<fs::path> checkpoint_dirs(const RunConfig& rc, const fs::path& ckpt_root) {
  std::vector<fs::path> dirs;
  if (rc.forecast_source == "stage1") {
    dirs.push_back(ckpt_root / "stage1");
  } else if (rc.forecast_source == "scratch") {
    dirs.push_back(ckpt_root / seed_label("scratch", rc.plan.seeds.front()));
  } else {
    for (int64_t k = 0; k < rc.plan.deep_ensemble_size; ++k) {
      dirs.push_back(ckpt_root / seed_label("stage2", rc.plan.seeds[static_cast<std::size_t>(k)]));
    }
  }
  for (const auto& d : dirs) require(d / "manifest.json", rc.forecast_source + " checkpoint", "train");
  return dirs;
}

// ---------------------------------------------------------------------------
// Stage bodies shared by the commands and the ablation grid.

void train_into(const RunConfig& rc, const fs::path& data_dir, const fs::path& out, const CommandOptions& o,
                std::int64_t checkpoint_every) {
  const auto loaded = load_data(data_dir);
  const auto data = make_training_data(loaded.trajectory, loaded.manifest.stats, loaded.manifest.clock_period,
                                       loaded.manifest.static_seed);
  auto model_cfg = rc.model;
  model_cfg.in_channels = data.train.input_channels();
  model_cfg.out_channels = data.train.n_channels();

  std::mutex log_mutex;
  TrainHooks hooks;
  hooks.checkpoint_dir = out;
  hooks.checkpoint_every = checkpoint_every;
  hooks.parallel = o.parallel;
  hooks.log = [&](const std::string& m) {
    std::lock_guard lock(log_mutex);
    note(o, m);
  };

  std::ostringstream history;
  history << "run,step,epoch,train_loss,val_mae,val_crps\n";
  auto add_history = [&](const std::string& name, const Checkpoint& c) {
    for (const auto& p : c.history) {
      history << name << ',' << p.step << ',' << p.epoch << ',' << p.train_loss << ',' << p.val_mae << ','
              << p.val_crps << '\n';
    }
  };

  auto model = build(model_cfg, loaded.trajectory.grid);
  const auto stage1 = train_stage1(rc.plan, model, data, hooks);
  add_history("stage1", stage1);

  report::TrainingCurves curves;
  if (!stage1.history.empty()) curves.baseline = stage1.history.back().val_crps;
  curves.baseline_label = "stage1 (dropout ensemble)";

  if (rc.run_stage2 && rc.plan.stage2_epochs > 0) {
    const auto runs = train_deep_ensemble(rc.plan, stage1, data, hooks);
    for (const auto& c : runs) {
      add_history(seed_label("stage2", c.seed), c);
      auto s = report::curve_from_history(seed_label("stage2", c.seed), c.history);
      // Stage 2 continues after Stage 1 on the step axis.
      for (auto& x : s.x) x += static_cast<double>(stage1.global_step);
      curves.runs.push_back(std::move(s));
    }
  }
  if (rc.plan.from_scratch_crps) {
    auto fresh = build(model_cfg, loaded.trajectory.grid);
    const auto scratch = train_from_scratch(rc.plan, fresh, data, hooks);
    add_history(seed_label("scratch", scratch.seed), scratch);
    curves.runs.push_back(report::curve_from_history("from scratch (CRPS)", scratch.history));
  }
  write_text(out / "history.csv", history.str());
  if (curves.runs.empty()) curves.runs.push_back(report::curve_from_history("stage1", stage1.history));
  report::render_training_curves(curves, out.parent_path() / "report" / "training_curves.svg");
}

struct InitSelection {
  std::vector<TrainingWindow> windows;
};

InitSelection select_inits(const RunConfig& rc, const Loaded& loaded) {
  const auto r = split_ranges(loaded.trajectory.size());
  const auto test = make_windows(loaded.trajectory.slice(r.test_begin, r.test_end), loaded.manifest.stats,
                                 loaded.manifest.clock_period, loaded.manifest.static_seed);
  const int64_t n_start = test.size() - rc.forecast_steps + 1;
  if (n_start < 1) {
    throw ConfigError("test split (" + std::to_string(test.size()) + " windows) is too short for " +
                      std::to_string(rc.forecast_steps) + " lead steps");
  }
  const int64_t I = std::min(rc.forecast_inits, n_start);
  InitSelection s;
  for (int64_t j = 0; j < I; ++j) s.windows.push_back(test.at(I == 1 ? 0 : j * (n_start - 1) / (I - 1)));
  return s;
}

void forecast_into(const RunConfig& rc, const fs::path& data_dir, const fs::path& ckpt_root, const fs::path& out,
                   const CommandOptions& o) {
  const auto loaded = load_data(data_dir);
  std::vector<Checkpoint> ckpts;
  for (const auto& d : checkpoint_dirs(rc, ckpt_root)) ckpts.push_back(load_checkpoint(d));
  const auto inits = select_inits(rc, loaded);
  RolloutOptions ro;
  ro.mask_schedule = rc.mask_schedule;
  ro.use_ema = rc.use_ema;
  ro.max_batch = rc.max_batch;
  const auto forecasts = roll_forward(ckpts, inits.windows, rc.forecast_steps, rc.forecast_members, rc.forecast_seed, ro);
  nlohmann::json index = nlohmann::json::array();
  for (const auto& f : forecasts) {
    char name[32];
    std::snprintf(name, sizeof name, "init_%06lld", static_cast<long long>(f.init_time));
    write_archive(f, out / name);
    index.push_back({{"archive", name}, {"init_time", f.init_time}, {"truncated", f.truncated()}});
    if (f.truncated()) note(o, std::string("warning: non-finite members truncated in ") + name);
  }
  io::write_json(out / "index.json", {{"archives", index}, {"source", rc.forecast_source}});
}

std::vector<MetricRecord> evaluate_into(const RunConfig& rc, const fs::path& data_dir, const fs::path& forecast_dir,
                                        const fs::path& metrics_dir, const fs::path& report_dir) {
  const auto loaded = load_data(data_dir);
  const auto index = io::read_json(require(forecast_dir / "index.json", "forecast archives", "forecast"));
  std::vector<EnsembleForecast> forecasts;
  std::vector<std::vector<StateTensor>> truths;
  for (const auto& a : index.at("archives")) {
    auto f = read_archive(forecast_dir / a.at("archive").get<std::string>());
    std::vector<StateTensor> truth;
    for (auto lead : f.lead_steps) {
      const auto t = f.init_time + lead;
      if (t >= loaded.trajectory.size()) throw InvalidArgument("truth does not cover lead " + std::to_string(lead));
      truth.push_back(loaded.trajectory.at(t));
    }
    forecasts.push_back(std::move(f));
    truths.push_back(std::move(truth));
  }
  const auto weights = area_weights(loaded.trajectory.grid);
  const auto records = evaluate(forecasts, truths, weights);
  write_metrics_csv(metrics_dir / "metrics.csv", records);
  io::write_json(metrics_dir / "metrics.json", metrics_to_json(records));

  const int64_t L = forecasts.front().n_leads();
  const int64_t lead = rc.spectrum_lead > 0 ? std::min(rc.spectrum_lead, L) : L;
  std::vector<torch::Tensor> fc, tr;
  for (std::size_t i = 0; i < forecasts.size(); ++i) {
    fc.push_back(forecasts[i].members.select(1, lead - 1));
    tr.push_back(truths[i][static_cast<std::size_t>(lead - 1)].values.unsqueeze(0));
  }
  const auto& names = loaded.trajectory.channel_names;
  const auto fspec = zonal_spectrum(torch::cat(fc), loaded.trajectory.grid, rc.lat_band, lead, names);
  const auto tspec = zonal_spectrum(torch::cat(tr), loaded.trajectory.grid, rc.lat_band, lead, names);
  std::vector<SpectrumRecord> plot;
  for (std::size_t c = 0; c < fspec.size(); ++c) {
    write_spectrum_csv(metrics_dir / "spectra" / (fspec[c].variable + "_lead" + std::to_string(lead) + "_forecast.csv"),
                       fspec[c]);
    write_spectrum_csv(metrics_dir / "spectra" / (tspec[c].variable + "_lead" + std::to_string(lead) + "_truth.csv"),
                       tspec[c]);
    auto f = fspec[c];
    f.variable += " forecast";
    auto t = tspec[c];
    t.variable += " truth";
    plot.push_back(f);
    plot.push_back(t);
  }
  report::render_spectra(plot, report_dir / "spectra.svg");
  return records;
}

double mean_of(const std::vector<MetricRecord>& r, double MetricRecord::*field) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : r) {
    if (std::isfinite(x.*field)) s += x.*field, ++n;
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace

void cmd_simulate(const Config& config, const CommandOptions& o) {
  const auto rc = resolve(config);
  const auto dir = rc.run_dir() / "data";
  claim_output(dir, o.force, "a simulated trajectory");
  note(o, "simulating " + std::to_string(rc.n_steps) + " steps on " + std::to_string(rc.grid.n_lat) + "x" +
              std::to_string(rc.grid.n_lon));
  const auto traj = simulate(rc.grid, rc.dynamics, rc.n_steps);
  const auto r = split_ranges(traj.size());
  // Normalization is fitted on the training split only.
  const auto stats = fit_norm_stats(traj.slice(r.train_begin, r.train_end));
  TrajectoryManifest m{rc.grid, rc.dynamics, traj.channel_names, stats, traj.size(), rc.clock_period, rc.static_seed};
  save_trajectory(dir, traj, m);
  write_command_manifest(dir, "simulate", config);
}

void cmd_train(const Config& config, const CommandOptions& o) {
  const auto rc = resolve(config);
  const auto out = rc.run_dir() / "checkpoints";
  require(rc.run_dir() / "data" / "manifest.json", "trajectory", "simulate");
  claim_output(out, o.force, "checkpoints");
  train_into(rc, rc.run_dir() / "data", out, o, config.get_int("train.checkpoint_every"));
  write_command_manifest(out, "train", config);
}

void cmd_forecast(const Config& config, const CommandOptions& o) {
  const auto rc = resolve(config);
  const auto out = rc.run_dir() / "forecasts";
  checkpoint_dirs(rc, rc.run_dir() / "checkpoints");
  claim_output(out, o.force, "forecast archives");
  forecast_into(rc, rc.run_dir() / "data", rc.run_dir() / "checkpoints", out, o);
  write_command_manifest(out, "forecast", config);
}

void cmd_evaluate(const Config& config, const CommandOptions& o) {
  const auto rc = resolve(config);
  const auto out = rc.run_dir() / "metrics";
  require(rc.run_dir() / "forecasts" / "index.json", "forecast archives", "forecast");
  claim_output(out, o.force, "metrics");
  evaluate_into(rc, rc.run_dir() / "data", rc.run_dir() / "forecasts", out, rc.run_dir() / "report");
  write_command_manifest(out, "evaluate", config);
}

void cmd_scorecard(const Config& config, const CommandOptions& o) {
  const auto rc = resolve(config);
  const fs::path model_csv = rc.scorecard_model.empty() ? rc.run_dir() / "metrics" / "metrics.csv" : fs::path(rc.scorecard_model);
  if (rc.scorecard_reference.empty()) throw ConfigError("scorecard.reference must name a metrics CSV");
  const auto model = read_metrics_csv(require(model_csv, "model metrics", "evaluate"));
  const auto reference = read_metrics_csv(require(rc.scorecard_reference, "reference metrics", "evaluate"));
  const auto out = rc.run_dir() / "report";
  if (fs::exists(out / "scorecard.svg") && !o.force) {
    throw ConfigError((out / "scorecard.svg").string() + " exists; rerun with --force to overwrite");
  }
  const auto table = relative_skill(model, reference, rc.scorecard_metric);
  report::render_scorecard(table, out / "scorecard.svg");
  report::render_skill_vs_lead(table, out / "skill_vs_lead.svg");
  io::write_json(out / "relative_skill.json", {{"metric", table.metric},
                                               {"aggregate_percent", table.aggregate},
                                               {"model", model_csv.string()},
                                               {"reference", rc.scorecard_reference}});
  note(o, "aggregate relative " + table.metric + ": " + std::to_string(table.aggregate) + "%");
}

void cmd_ablate(const Config& config, const CommandOptions& o) {
  const auto rc = resolve(config);
  const auto data_dir = rc.run_dir() / "data";
  require(data_dir / "manifest.json", "trajectory", "simulate");
  const auto root = rc.run_dir() / "ablate";
  claim_output(root, o.force, "ablation results");

  struct Cell {
    std::string name;
    Config config;
  };
  std::vector<Cell> cells{{"baseline", config}};
  auto variant = [&](const std::string& name, std::vector<std::pair<std::string, std::string>> sets) {
    Config c = config;
    for (const auto& [k, v] : sets) c.set(k, v);
    cells.push_back({name, c});
  };
  const double base_rate = rc.model.dropout_rate;
  for (double rate : rc.ablate_dropout_rates) {
    if (std::abs(rate - base_rate) < 1e-12) continue;
    std::ostringstream name;
    name << "dropout_" << rate;
    variant(name.str(), {{"model.dropout_rate", std::to_string(rate)}});
  }
  for (auto m : rc.ablate_ensemble_sizes) {
    if (m == rc.plan.train_ensemble_size) continue;
    variant("members_" + std::to_string(m), {{"train.ensemble_size", std::to_string(m)}});
  }
  if (rc.ablate_adaln) variant("adaln", {{"model.stochastic_mode", "adaln_noise"}});
  if (rc.ablate_scratch) {
    variant("scratch", {{"train.from_scratch", "true"}, {"train.stage2", "false"}, {"forecast.source", "scratch"}});
  }
  if (rc.ablate_adamw) variant("adamw", {{"optim1.use_muon", "false"}, {"optim2.use_muon", "false"}});

  auto run_cell = [&](const Cell& cell) {
    const auto crc = resolve(cell.config);
    const auto dir = root / cell.name;
    CommandOptions co = o;
    co.parallel = 1;
    co.log = [&, name = cell.name](const std::string& m) { note(o, "[" + name + "] " + m); };
    train_into(crc, data_dir, dir / "checkpoints", co, 0);
    forecast_into(crc, data_dir, dir / "checkpoints", dir / "forecasts", co);
    auto records = evaluate_into(crc, data_dir, dir / "forecasts", dir / "metrics", dir / "report");
    write_text(dir / "resolved_config.toml", cell.config.to_toml());
    return records;
  };

  std::vector<std::vector<MetricRecord>> results(cells.size());
  const auto width = static_cast<std::size_t>(std::max(1, o.parallel));
  for (std::size_t begin = 0; begin < cells.size(); begin += width) {
    std::vector<std::future<std::vector<MetricRecord>>> jobs;
    for (std::size_t i = begin; i < std::min(cells.size(), begin + width); ++i) {
      jobs.push_back(std::async(width > 1 ? std::launch::async : std::launch::deferred,
                                [&, i] { return run_cell(cells[i]); }));
    }
    for (std::size_t j = 0; j < jobs.size(); ++j) results[begin + j] = jobs[j].get();
  }

  const double base = mean_of(results.front(), &MetricRecord::crps);
  std::ostringstream csv;
  csv.precision(17);
  csv << "cell,mean_crps,mean_ssr,relative_to_baseline_percent\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const double crps = mean_of(results[i], &MetricRecord::crps);
    csv << cells[i].name << ',' << crps << ',' << mean_of(results[i], &MetricRecord::ssr) << ','
        << relative_change(crps, base) << '\n';
  }
  write_text(root / "summary.csv", csv.str());
  // Per-cell scorecards against the baseline.
  for (std::size_t i = 1; i < cells.size(); ++i) {
    const auto table = relative_skill(results[i], results.front(), SkillMetric::crps);
    report::render_scorecard(table, root / cells[i].name / "report" / "scorecard_vs_baseline.svg");
  }
  write_command_manifest(root, "ablate", config);
}

std::vector<AblationResult> read_ablation_summary(const fs::path& path) {
  std::ifstream is(require(path, "ablation summary", "ablate"));
  std::string line;
  std::getline(is, line);
  std::vector<AblationResult> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[4];
    for (auto& s : f) std::getline(ss, s, ',');
    out.push_back({f[0], std::stod(f[1]), std::stod(f[2]), std::stod(f[3])});
  }
  return out;
}

}  // namespace toycast::cli
