#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "toycast/backbone.hpp"
#include "toycast/checkpoint.hpp"
#include "toycast/toyatmos.hpp"

namespace toycast {

/// Dropout-mask (or adaLN-noise) schedule across autoregressive steps.
enum class MaskSchedule {
  per_step,  // fresh draw per step from (member_seed, init_time, step)
  frozen,    // one draw per member for the whole trajectory
};
std::string to_string(MaskSchedule schedule);
MaskSchedule mask_schedule_from_string(const std::string& name);

struct MemberId {
  int64_t checkpoint_index = 0;
  uint64_t member_seed = 0;
  bool operator==(const MemberId&) const = default;
};

/// K*N member trajectories from one initial condition.
struct EnsembleForecast {
  torch::Tensor members;  // [K*N, L, C, H, W] float32
  int64_t init_time = 0;
  std::vector<MemberId> member_ids;
  std::vector<int64_t> lead_steps;  // 1..L
  bool physical_units = true;
  GridSpec grid;
  NormStats stats;
  std::vector<std::string> channel_names;
  /// Per member, the number of finite leads; < L marks a truncated member.
  std::vector<int64_t> valid_leads;

  int64_t n_members() const { return members.size(0); }
  int64_t n_leads() const { return members.size(1); }
  bool truncated() const;
};

struct RolloutOptions {
  MaskSchedule mask_schedule = MaskSchedule::per_step;
  bool use_ema = true;
  /// false forces deterministic members regardless of model mode.
  bool stochastic = true;
  /// Samples per forward pass when batching members and init times.
  int64_t max_batch = 64;
};

/// Normalized-space rollout of one model from a batch of (x_{t-1}, x_t)
/// pairs [B, C, H, W] at per-sample times. Returns [B, n_steps, C, H, W].
/// Non-finite members are NaN from their first bad step onward and
/// `valid_steps` (if given) receives the count of finite steps per sample.
torch::Tensor rollout_normalized(UNetImpl& model, const ForcingBuilder& forcings, const torch::Tensor& prev,
                                 const torch::Tensor& cur, const std::vector<int64_t>& times,
                                 const std::vector<uint64_t>& member_seeds, bool stochastic, int64_t n_steps,
                                 MaskSchedule schedule, std::vector<int64_t>* valid_steps = nullptr);

/// Rolls K checkpoints x N members forward from one window (normalized
/// inputs). Members are ordered checkpoint-major; output is denormalized.
EnsembleForecast roll_forward(const std::vector<Checkpoint>& checkpoints, const TrainingWindow& init_window,
                              int64_t n_steps, int64_t members_per_checkpoint, uint64_t seed,
                              const RolloutOptions& options = {});

/// Same, for several initial windows at once (batched across inits).
std::vector<EnsembleForecast> roll_forward(const std::vector<Checkpoint>& checkpoints,
                                           const std::vector<TrainingWindow>& init_windows, int64_t n_steps,
                                           int64_t members_per_checkpoint, uint64_t seed,
                                           const RolloutOptions& options = {});

inline constexpr int kForecastFormatVersion = 1;

/// Directory: manifest.json + member_NNNN.f32 ([L, C, H, W] each).
void write_archive(const EnsembleForecast& forecast, const std::filesystem::path& dir);
EnsembleForecast read_archive(const std::filesystem::path& dir);

}  // namespace toycast
