#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "toycast/backbone.hpp"
#include "toycast/grid.hpp"
#include "toycast/optimizers.hpp"
#include "toycast/toyatmos.hpp"

namespace toycast {

/// One validation measurement taken during training.
struct HistoryPoint {
  int64_t step = 0;   // optimizer steps taken within the stage
  int64_t epoch = 0;
  double train_loss = 0.0;  // mean over steps since the previous point
  double val_mae = 0.0;     // deterministic one-step weighted MAE
  double val_crps = 0.0;    // mean over validation leads
  std::vector<double> val_crps_by_lead;
};

nlohmann::json to_json(const HistoryPoint& p);
HistoryPoint history_point_from_json(const nlohmann::json& doc);

inline constexpr int kCheckpointFormatVersion = 1;

/// Everything needed to resume a stage or run inference.
struct Checkpoint {
  ModelConfig model;
  GridSpec grid;
  NormStats stats;
  int64_t clock_period = 0;
  uint64_t static_seed = 7;
  std::vector<std::string> channel_names;

  std::string stage = "stage1";  // stage1 | stage2 | scratch
  uint64_t seed = 0;             // stage seed; all stage randomness is keyed by (seed, step)
  int64_t global_step = 0;
  int64_t epoch = 0;

  std::vector<NamedTensor> weights;
  std::vector<NamedTensor> ema;
  int64_t ema_updates = 0;
  OptimConfig optim;
  std::vector<std::pair<std::string, torch::Tensor>> optimizer_state;
  std::vector<double> recent_losses;  // spike-guard window
  int64_t skipped_steps = 0;

  std::vector<HistoryPoint> history;
  /// Free-form record of resolved settings and assumptions.
  nlohmann::json manifest = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Snapshot of a model's current parameters (deep copies).
std::vector<NamedTensor> snapshot_parameters(const UNetImpl& model);
/// Copies named values into the model. Parameters absent from `values` keep
/// their current value when `allow_missing` (used to load a dropout-mode
/// checkpoint into an adaLN model, whose extra parameters start at zero).
void load_parameters(UNetImpl& model, const std::vector<NamedTensor>& values, bool allow_missing = false);

/// Builds a model from the checkpoint using EMA weights (default) or raw weights.
UNet instantiate(const Checkpoint& checkpoint, bool use_ema = true);

}  // namespace toycast
