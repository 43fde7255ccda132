#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "toycast/backbone.hpp"
#include "toycast/checkpoint.hpp"
#include "toycast/error.hpp"
#include "toycast/objectives.hpp"
#include "toycast/optimizers.hpp"
#include "toycast/toyatmos.hpp"

namespace toycast {

struct TrainingPlan {
  int64_t stage1_epochs = 20;
  int64_t stage2_epochs = 4;
  int64_t batch_size = 8;
  int64_t train_ensemble_size = 2;  // M
  int64_t deep_ensemble_size = 1;   // K
  OptimConfig stage1_optim;
  OptimConfig stage2_optim;
  uint64_t stage1_seed = 0;
  std::vector<uint64_t> seeds{1};  // one per Stage-2 run
  bool from_scratch_crps = false;

  /// 0 = one pass over the training windows.
  int64_t steps_per_epoch = 0;
  /// Validation cadence in steps; 0 = once per epoch.
  int64_t validate_every = 0;
  std::vector<int64_t> val_leads{1, 2, 4};
  int64_t val_inits = 8;
  /// Members for validation CRPS; 0 = train_ensemble_size.
  int64_t val_members = 0;
  /// Skip a step when its loss exceeds spike_factor x the running median.
  double spike_factor = 10.0;
  int64_t spike_window = 50;
  /// Empty = uniform.
  std::vector<double> channel_weights;

  /// Full-scale schedule: 100 + 8 epochs, batch 48, M = 2, K = 4.
  static TrainingPlan full();
  /// Minutes-scale CPU schedule for the toy dataset.
  static TrainingPlan desk();

  void validate() const;
  nlohmann::json to_json() const;
  static TrainingPlan from_json(const nlohmann::json& doc);
};

/// Chronological train/validation/test windows over one trajectory.
struct TrainingData {
  WindowSet train;
  WindowSet validation;
  WindowSet test;
  int64_t clock_period = 0;
  uint64_t static_seed = 7;
  std::vector<std::string> channel_names;
};

TrainingData make_training_data(const Trajectory& trajectory, const NormStats& stats, int64_t clock_period,
                                uint64_t static_seed = 7);

struct TrainHooks {
  /// Periodic checkpoints land in checkpoint_dir/<stage>[_<seed>]; empty disables.
  std::filesystem::path checkpoint_dir;
  int64_t checkpoint_every = 0;  // steps, 0 = only at the end
  /// Stop once the stage reaches this step (-1 = run to completion).
  int64_t stop_at_step = -1;
  /// Resume this stage from a mid-stage checkpoint of the same stage.
  std::shared_ptr<const Checkpoint> resume;
  std::function<void(const std::string& stage, const HistoryPoint&)> on_validation;
  std::function<void(const std::string& stage, int64_t step, double loss)> on_step;
  std::function<void(const std::string& message)> log;
  /// Stage-2 runs of a deep ensemble trained concurrently.
  int parallel = 1;
};

/// Thrown when the loss or a gradient becomes non-finite. Carries the most
/// recent checkpoint whose validation completed.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, std::shared_ptr<Checkpoint> last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const { return *last_good_; }

 private:
  std::shared_ptr<Checkpoint> last_good_;
};

struct ValidationScores {
  double mae = 0.0;
  std::vector<double> crps_by_lead;
  double crps = 0.0;
};

/// Validation metrics in normalized units: one-step deterministic MAE over
/// up to `max_windows` windows and M-member rollout CRPS at each lead over
/// `n_inits` evenly spaced initial windows. Member seeds are fixed so that
/// successive evaluations differ only through the weights.
ValidationScores evaluate_validation(UNetImpl& model, const WindowSet& windows, const std::vector<int64_t>& leads,
                                     int64_t n_inits, int64_t n_members, const ChannelWeights& channel_weights,
                                     int64_t max_windows = 32);

/// Deterministic MAE pre-training. `model` is trained in place.
Checkpoint train_stage1(const TrainingPlan& plan, UNet& model, const TrainingData& data,
                        const TrainHooks& hooks = {});

/// Fair-CRPS fine-tuning from a Stage-1 checkpoint's EMA weights with
/// plan.seeds[seed_index]. EMA restarts at the loaded weights.
Checkpoint train_stage2(const TrainingPlan& plan, const Checkpoint& stage1, const TrainingData& data,
                        std::size_t seed_index = 0, const TrainHooks& hooks = {});

/// Fair-CRPS training from initialization for stage1 + stage2 epochs (the
/// same gradient-step budget as the curriculum), with the Stage-1 optimizer
/// settings.
Checkpoint train_from_scratch(const TrainingPlan& plan, UNet& model, const TrainingData& data,
                              const TrainHooks& hooks = {});

/// K Stage-2 runs from one Stage-1 checkpoint, seeds[0..K).
std::vector<Checkpoint> train_deep_ensemble(const TrainingPlan& plan, const Checkpoint& stage1,
                                            const TrainingData& data, const TrainHooks& hooks = {});

/// Sample-level forward passes per stage, and Stage 2's share of the total.
struct ComputeBudget {
  int64_t stage1_forward = 0;
  int64_t stage2_forward = 0;
  double stage2_fraction = 0.0;
};
ComputeBudget compute_budget(const TrainingPlan& plan, int64_t n_train_windows);

int64_t steps_per_epoch(const TrainingPlan& plan, int64_t n_train_windows);

}  // namespace toycast
