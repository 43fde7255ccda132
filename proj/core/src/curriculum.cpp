#include "toycast/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "toycast/rng.hpp"
#include "toycast/rollout.hpp"

namespace toycast {

TrainingPlan TrainingPlan::full() {
  TrainingPlan p;
  p.stage1_epochs = 100;
  p.stage2_epochs = 8;
  p.batch_size = 48;
  p.train_ensemble_size = 2;
  p.deep_ensemble_size = 4;
  p.stage1_optim = OptimConfig::stage1_full();
  p.stage2_optim = OptimConfig::stage2_full();
  p.seeds = {1, 2, 3, 4};
  return p;
}

TrainingPlan TrainingPlan::desk() {
  TrainingPlan p;
  p.stage1_epochs = 20;
  p.stage2_epochs = 4;
  p.batch_size = 8;
  p.stage1_optim.muon_peak_lr = 2e-2;
  p.stage1_optim.adamw_peak_lr = 2e-3;
  p.stage1_optim.warmup_steps = 50;
  p.stage1_optim.ema_decay = 0.995;
  p.stage2_optim = p.stage1_optim;
  p.stage2_optim.muon_peak_lr = 2e-2;
  p.stage2_optim.adamw_peak_lr = 5e-4;
  p.stage2_optim.warmup_steps = 10;
  return p;
}

void TrainingPlan::validate() const {
  if (stage1_epochs < 0 || stage2_epochs < 0) throw InvalidArgument("epoch counts must be >= 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (train_ensemble_size < 2) throw InvalidArgument("train_ensemble_size (M) must be >= 2");
  if (deep_ensemble_size < 1) throw InvalidArgument("deep_ensemble_size (K) must be >= 1");
  if (static_cast<int64_t>(seeds.size()) < deep_ensemble_size) {
    throw InvalidArgument("need at least deep_ensemble_size seeds");
  }
  if (steps_per_epoch < 0 || validate_every < 0) throw InvalidArgument("steps_per_epoch/validate_every must be >= 0");
  if (val_leads.empty()) throw InvalidArgument("val_leads must not be empty");
  for (auto l : val_leads) {
    if (l < 1) throw InvalidArgument("validation leads must be >= 1");
  }
  if (val_inits < 1) throw InvalidArgument("val_inits must be >= 1");
  if (val_members != 0 && val_members < 2) throw InvalidArgument("val_members must be 0 or >= 2");
  if (!(spike_factor > 1.0)) throw InvalidArgument("spike_factor must be > 1");
  if (spike_window < 1) throw InvalidArgument("spike_window must be >= 1");
  stage1_optim.validate();
  stage2_optim.validate();
}

nlohmann::json TrainingPlan::to_json() const {
  return {{"stage1_epochs", stage1_epochs},
          {"stage2_epochs", stage2_epochs},
          {"batch_size", batch_size},
          {"train_ensemble_size", train_ensemble_size},
          {"deep_ensemble_size", deep_ensemble_size},
          {"stage1_optim", stage1_optim.to_json()},
          {"stage2_optim", stage2_optim.to_json()},
          {"stage1_seed", stage1_seed},
          {"seeds", seeds},
          {"from_scratch_crps", from_scratch_crps},
          {"steps_per_epoch", steps_per_epoch},
          {"validate_every", validate_every},
          {"val_leads", val_leads},
          {"val_inits", val_inits},
          {"val_members", val_members},
          {"spike_factor", spike_factor},
          {"spike_window", spike_window},
          {"channel_weights", channel_weights}};
}

TrainingPlan TrainingPlan::from_json(const nlohmann::json& doc) {
  TrainingPlan p;
  p.stage1_epochs = doc.at("stage1_epochs").get<int64_t>();
  p.stage2_epochs = doc.at("stage2_epochs").get<int64_t>();
  p.batch_size = doc.at("batch_size").get<int64_t>();
  p.train_ensemble_size = doc.at("train_ensemble_size").get<int64_t>();
  p.deep_ensemble_size = doc.at("deep_ensemble_size").get<int64_t>();
  p.stage1_optim = OptimConfig::from_json(doc.at("stage1_optim"));
  p.stage2_optim = OptimConfig::from_json(doc.at("stage2_optim"));
  p.stage1_seed = doc.at("stage1_seed").get<uint64_t>();
  p.seeds = doc.at("seeds").get<std::vector<uint64_t>>();
  p.from_scratch_crps = doc.at("from_scratch_crps").get<bool>();
  p.steps_per_epoch = doc.at("steps_per_epoch").get<int64_t>();
  p.validate_every = doc.at("validate_every").get<int64_t>();
  p.val_leads = doc.at("val_leads").get<std::vector<int64_t>>();
  p.val_inits = doc.at("val_inits").get<int64_t>();
  p.val_members = doc.at("val_members").get<int64_t>();
  p.spike_factor = doc.at("spike_factor").get<double>();
  p.spike_window = doc.at("spike_window").get<int64_t>();
  p.channel_weights = doc.at("channel_weights").get<std::vector<double>>();
  p.validate();
  return p;
}

TrainingData make_training_data(const Trajectory& trajectory, const NormStats& stats, int64_t clock_period,
                                uint64_t static_seed) {
  const auto r = split_ranges(trajectory.size());
  return TrainingData{
      WindowSet(trajectory.slice(r.train_begin, r.train_end), stats, clock_period, static_seed),
      WindowSet(trajectory.slice(r.val_begin, r.val_end), stats, clock_period, static_seed),
      WindowSet(trajectory.slice(r.test_begin, r.test_end), stats, clock_period, static_seed),
      clock_period,
      static_seed,
      trajectory.channel_names,
  };
}

int64_t steps_per_epoch(const TrainingPlan& plan, int64_t n_train_windows) {
  if (plan.steps_per_epoch > 0) return plan.steps_per_epoch;
  return std::max<int64_t>(1, (n_train_windows + plan.batch_size - 1) / plan.batch_size);
}

ComputeBudget compute_budget(const TrainingPlan& plan, int64_t n_train_windows) {
  const auto spe = steps_per_epoch(plan, n_train_windows);
  ComputeBudget b;
  b.stage1_forward = plan.stage1_epochs * spe * plan.batch_size;
  b.stage2_forward = plan.stage2_epochs * spe * plan.batch_size * plan.train_ensemble_size;
  const auto total = b.stage1_forward + b.stage2_forward;
  b.stage2_fraction = total > 0 ? static_cast<double>(b.stage2_forward) / static_cast<double>(total) : 0.0;
  return b;
}

namespace {

constexpr uint64_t kValidationSeed = 0x5A11D;

ChannelWeights channel_weights_for(const TrainingPlan& plan, int64_t C) {
  if (plan.channel_weights.empty()) return ChannelWeights::uniform(C);
  ChannelWeights w{plan.channel_weights};
  w.validate(C);
  return w;
}

std::vector<NamedTensor> named_params(UNetImpl& model) {
  std::vector<NamedTensor> out;
  for (const auto& [name, p] : model.named_parameter_list()) out.push_back({name, p});
  return out;
}

uint64_t stage_code(const std::string& stage) {
  if (stage == "stage1") return 1;
  if (stage == "stage2") return 2;
  return 3;
}

std::vector<int64_t> epoch_permutation(int64_t n, uint64_t key) {
  std::vector<int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  const CounterRng rng(key);
  for (int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<int64_t>(rng.bits(static_cast<uint64_t>(i)) % static_cast<uint64_t>(i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

double median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

struct StageSpec {
  std::string stage;
  uint64_t seed = 0;
  int64_t epochs = 0;
  OptimConfig optim;
  int64_t members = 1;  // 1 = weighted MAE, >= 2 = fair CRPS
};

Checkpoint blank_checkpoint(const UNetImpl& model, const TrainingData& data, const StageSpec& spec) {
  Checkpoint c;
  c.model = model.config();
  c.grid = model.grid();
  c.stats = data.train.stats();
  c.clock_period = data.clock_period;
  c.static_seed = data.static_seed;
  c.channel_names = data.channel_names;
  c.stage = spec.stage;
  c.seed = spec.seed;
  c.optim = spec.optim;
  return c;
}

std::string run_label(const StageSpec& spec) {
  return spec.stage == "stage1" ? spec.stage : spec.stage + "_seed" + std::to_string(spec.seed);
}

Checkpoint run_stage(const TrainingPlan& plan, StageSpec spec, UNetImpl& model, const TrainingData& data,
                     const TrainHooks& hooks, std::vector<NamedTensor> ema_start) {
  plan.validate();
  const auto& train = data.train;
  const int64_t n_train = train.size();
  if (n_train < 1) throw InvalidArgument("training split has no windows");
  const int64_t spe = steps_per_epoch(plan, n_train);
  const int64_t total = spec.epochs * spe;
  spec.optim.total_steps = total;
  spec.optim.warmup_steps = std::min(spec.optim.warmup_steps, total);

  const int64_t C = model.config().out_channels;
  const auto cw = channel_weights_for(plan, C);
  const auto aw = area_weights(model.grid());
  const bool stochastic = model.config().stochastic_mode != StochasticMode::deterministic;
  const int64_t val_members = plan.val_members > 0 ? plan.val_members : plan.train_ensemble_size;
  auto log = [&](const std::string& msg) {
    if (hooks.log) hooks.log(run_label(spec) + ": " + msg);
  };

  auto params = named_params(model);
  HybridOptimizer optimizer(params, spec.optim);
  EmaTracker ema(ema_start.empty() ? params : ema_start, spec.optim.ema_decay);

  Checkpoint state = blank_checkpoint(model, data, spec);
  int64_t step = 0;
  if (hooks.resume) {
    const auto& r = *hooks.resume;
    if (r.stage != spec.stage || r.seed != spec.seed) {
      throw InvalidArgument("resume checkpoint is for " + r.stage + " seed " + std::to_string(r.seed) +
                            ", not " + spec.stage + " seed " + std::to_string(spec.seed));
    }
    load_parameters(model, r.weights);
    torch::NoGradGuard guard;
    for (std::size_t i = 0; i < r.ema.size() && i < ema.averages().size(); ++i) {
      ema.averages()[i].tensor.copy_(r.ema[i].tensor);
    }
    ema.set_updates(r.ema_updates);
    optimizer.load_state_arrays(r.optimizer_state);
    step = r.global_step;
    state.history = r.history;
    state.recent_losses = r.recent_losses;
    state.skipped_steps = r.skipped_steps;
    state.manifest = r.manifest;
  }
  double loss_sum = state.manifest.value("pending_loss_sum", 0.0);
  int64_t loss_count = state.manifest.value("pending_loss_count", int64_t{0});

  auto eval_model = build(model.config(), model.grid());
  eval_model->set_residual_scale(data.train.stats().residual_scale());
  eval_model->eval();

  auto snapshot = [&](int64_t at_step) {
    auto c = std::make_shared<Checkpoint>(state);
    c->global_step = at_step;
    c->epoch = at_step / spe;
    c->weights = snapshot_parameters(model);
    c->ema.clear();
    for (const auto& a : ema.averages()) c->ema.push_back({a.name, a.tensor.clone()});
    c->ema_updates = ema.updates();
    c->optimizer_state.clear();
    for (const auto& [n, t] : optimizer.state_arrays()) c->optimizer_state.emplace_back(n, t.clone());
    c->manifest["forward_passes"] = state.manifest.value("forward_passes", int64_t{0});
    c->manifest["steps_per_epoch"] = spe;
    c->manifest["pending_loss_sum"] = loss_sum;
    c->manifest["pending_loss_count"] = loss_count;
    c->manifest["members"] = spec.members;
    c->manifest["loss"] = spec.members == 1 ? "weighted_mae" : "fair_crps";
    return c;
  };

  auto validate_now = [&](int64_t at_step) {
    load_parameters(*eval_model, ema.averages());
    const auto scores = evaluate_validation(*eval_model, data.validation, plan.val_leads, plan.val_inits,
                                            val_members, cw);
    HistoryPoint p;
    p.step = at_step;
    p.epoch = at_step / spe;
    p.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
    p.val_mae = scores.mae;
    p.val_crps = scores.crps;
    p.val_crps_by_lead = scores.crps_by_lead;
    state.history.push_back(p);
    loss_sum = 0.0;
    loss_count = 0;
    if (hooks.on_validation) hooks.on_validation(spec.stage, p);
    log("step " + std::to_string(at_step) + " val_mae " + std::to_string(p.val_mae) + " val_crps " +
        std::to_string(p.val_crps));
  };
  auto save_to = [&](const Checkpoint& c, const std::string& suffix) {
    if (hooks.checkpoint_dir.empty()) return;
    save_checkpoint(hooks.checkpoint_dir / (run_label(spec) + suffix), c);
  };

  if (!hooks.resume) validate_now(0);
  auto last_good = snapshot(step);

  std::vector<int64_t> perm;
  int64_t perm_epoch = -1;
  const int64_t B = plan.batch_size;
  const int64_t M = spec.members;
  const int64_t stop = hooks.stop_at_step >= 0 ? std::min(hooks.stop_at_step, total) : total;
  for (; step < stop; ++step) {
    const int64_t epoch = step / spe;
    if (epoch != perm_epoch) {
      perm = epoch_permutation(n_train, mix_seed({spec.seed, stage_code(spec.stage), static_cast<uint64_t>(epoch)}));
      perm_epoch = epoch;
    }
    const int64_t pos = step % spe;
    std::vector<int64_t> idx;
    for (int64_t b = 0; b < B; ++b) idx.push_back(perm[static_cast<std::size_t>((pos * B + b) % n_train)]);
    auto [inputs, targets] = train.batch(idx);
    const int64_t nb = inputs.size(0);

    std::vector<StochasticTag> tags;
    for (int64_t m = 0; m < M; ++m) {
      for (int64_t b = 0; b < nb; ++b) {
        tags.push_back({mix_seed({spec.seed, stage_code(spec.stage), static_cast<uint64_t>(step),
                                  static_cast<uint64_t>(m), static_cast<uint64_t>(b)}),
                        stochastic});
      }
    }
    model.train();
    const auto x = M == 1 ? inputs : inputs.repeat({M, 1, 1, 1});
    const auto pred = model.forward(x, std::span<const StochasticTag>(tags));
    const auto breakdown = M == 1 ? weighted_mae(pred, targets, aw, cw)
                                  : fair_crps(pred.view({M, nb, C, pred.size(2), pred.size(3)}), targets, aw, cw);
    state.manifest["forward_passes"] = state.manifest.value("forward_passes", int64_t{0}) + M * nb;
    if (hooks.on_step) hooks.on_step(spec.stage, step, breakdown.total);

    if (!std::isfinite(breakdown.total)) {
      save_to(*last_good, "_last_good");
      throw TrainingDiverged(run_label(spec) + ": non-finite loss at step " + std::to_string(step), last_good);
    }
    auto& recent = state.recent_losses;
    if (static_cast<int64_t>(recent.size()) >= std::min<int64_t>(10, plan.spike_window) &&
        breakdown.total > plan.spike_factor * median(recent)) {
      ++state.skipped_steps;
      log("skipped step " + std::to_string(step) + " (loss " + std::to_string(breakdown.total) + ")");
    } else {
      optimizer.zero_grad();
      breakdown.loss.backward();
      try {
        optimizer.step(step + 1);
      } catch (const NumericError& e) {
        save_to(*last_good, "_last_good");
        throw TrainingDiverged(run_label(spec) + ": " + e.what() + " at step " + std::to_string(step), last_good);
      }
      ema.update(params);
      recent.push_back(breakdown.total);
      if (static_cast<int64_t>(recent.size()) > plan.spike_window) recent.erase(recent.begin());
      loss_sum += breakdown.total;
      ++loss_count;
    }

    const int64_t done = step + 1;
    const bool val_due = plan.validate_every > 0 ? done % plan.validate_every == 0 : done % spe == 0;
    if (val_due || done == total) {
      validate_now(done);
      last_good = snapshot(done);
    }
    if (hooks.checkpoint_every > 0 && done % hooks.checkpoint_every == 0 && done != total) {
      save_to(*snapshot(done), "_step" + std::to_string(done));
    }
  }

  model.eval();
  auto final = snapshot(step);
  if (step == total) save_to(*final, "");
  return *final;
}

}  // namespace

ValidationScores evaluate_validation(UNetImpl& model, const WindowSet& windows, const std::vector<int64_t>& leads,
                                     int64_t n_inits, int64_t n_members, const ChannelWeights& channel_weights,
                                     int64_t max_windows) {
  if (leads.empty()) throw InvalidArgument("need at least one validation lead");
  if (n_members < 2) throw InvalidArgument("validation CRPS needs >= 2 members");
  torch::NoGradGuard guard;
  const auto aw = area_weights(model.grid());
  const int64_t C = model.config().out_channels;
  const int64_t max_lead = *std::max_element(leads.begin(), leads.end());
  const int64_t n_start = windows.size() - max_lead + 1;  // window i needs state i + 1 + max_lead
  if (n_start < 1) throw InvalidArgument("validation split too short for lead " + std::to_string(max_lead));

  ValidationScores out;
  {
    const int64_t nw = std::min(max_windows, windows.size());
    std::vector<int64_t> idx;
    for (int64_t j = 0; j < nw; ++j) idx.push_back(j * windows.size() / nw);
    auto [inputs, targets] = windows.batch(idx);
    const std::vector<StochasticTag> tags(idx.size());
    const auto pred = model.forward(inputs, std::span<const StochasticTag>(tags));
    out.mae = weighted_mae(pred, targets, aw, channel_weights).total;
  }

  const int64_t I = std::min(n_inits, n_start);
  std::vector<int64_t> inits;
  for (int64_t j = 0; j < I; ++j) inits.push_back(I == 1 ? 0 : j * (n_start - 1) / (I - 1));
  std::vector<torch::Tensor> prev, cur;
  std::vector<int64_t> times;
  std::vector<uint64_t> seeds;
  for (int64_t m = 0; m < n_members; ++m) {
    for (auto i : inits) {
      prev.push_back(windows.normalized_state(i, 0));
      cur.push_back(windows.normalized_state(i, 1));
      times.push_back(windows.time_of(i));
      seeds.push_back(mix_seed({kValidationSeed, static_cast<uint64_t>(m)}));
    }
  }
  const auto traj = rollout_normalized(model, windows.forcings(), torch::stack(prev), torch::stack(cur), times,
                                       seeds, true, max_lead, MaskSchedule::per_step);
  const auto members = traj.view({n_members, I, max_lead, C, traj.size(3), traj.size(4)});
  for (auto lead : leads) {
    std::vector<torch::Tensor> truth;
    for (auto i : inits) truth.push_back(windows.normalized_state(i, 1 + lead));
    const auto score = fair_crps(members.select(2, lead - 1), torch::stack(truth), aw, channel_weights);
    out.crps_by_lead.push_back(score.total);
  }
  out.crps = std::accumulate(out.crps_by_lead.begin(), out.crps_by_lead.end(), 0.0) /
             static_cast<double>(out.crps_by_lead.size());
  return out;
}

Checkpoint train_stage1(const TrainingPlan& plan, UNet& model, const TrainingData& data, const TrainHooks& hooks) {
  StageSpec spec{"stage1", plan.stage1_seed, plan.stage1_epochs, plan.stage1_optim, 1};
  model->set_residual_scale(data.train.stats().residual_scale());
  return run_stage(plan, spec, *model, data, hooks, {});
}

Checkpoint train_stage2(const TrainingPlan& plan, const Checkpoint& stage1, const TrainingData& data,
                        std::size_t seed_index, const TrainHooks& hooks) {
  if (plan.train_ensemble_size < 2) throw InvalidArgument("Stage 2 needs train_ensemble_size >= 2");
  if (seed_index >= plan.seeds.size()) throw InvalidArgument("seed index out of range");
  auto model = instantiate(stage1, /*use_ema=*/true);
  StageSpec spec{"stage2", plan.seeds[seed_index], plan.stage2_epochs, plan.stage2_optim, plan.train_ensemble_size};
  auto result = run_stage(plan, spec, *model, data, hooks, {});
  result.manifest["initialized_from"] = stage1.stage + "_ema";
  return result;
}

Checkpoint train_from_scratch(const TrainingPlan& plan, UNet& model, const TrainingData& data,
                              const TrainHooks& hooks) {
  if (plan.train_ensemble_size < 2) throw InvalidArgument("CRPS training needs train_ensemble_size >= 2");
  StageSpec spec{"scratch", plan.seeds.front(), plan.stage1_epochs + plan.stage2_epochs, plan.stage1_optim,
                 plan.train_ensemble_size};
  model->set_residual_scale(data.train.stats().residual_scale());
  return run_stage(plan, spec, *model, data, hooks, {});
}

std::vector<Checkpoint> train_deep_ensemble(const TrainingPlan& plan, const Checkpoint& stage1,
                                            const TrainingData& data, const TrainHooks& hooks) {
  plan.validate();
  const auto K = static_cast<std::size_t>(plan.deep_ensemble_size);
  std::vector<Checkpoint> out(K);
  const auto width = static_cast<std::size_t>(std::max(1, hooks.parallel));
  for (std::size_t begin = 0; begin < K; begin += width) {
    std::vector<std::future<Checkpoint>> jobs;
    for (std::size_t k = begin; k < std::min(K, begin + width); ++k) {
      jobs.push_back(std::async(width > 1 ? std::launch::async : std::launch::deferred,
                                [&, k] { return train_stage2(plan, stage1, data, k, hooks); }));
    }
    for (std::size_t j = 0; j < jobs.size(); ++j) out[begin + j] = jobs[j].get();
  }
  return out;
}

}  // namespace toycast
