#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "toycast/grid.hpp"

namespace toycast {

/// Synthetic "toy planet" dynamics. Per-channel vectors must have
/// `n_channels` entries.
struct DynamicsParams {
  int64_t n_channels = 4;
  std::vector<double> advection_speed;  // cells per step along longitude
  std::vector<double> diffusion_coeff;  // nondimensional, <= 0.25
  double forcing_amplitude = 0.0;       // stochastic forcing scale
  double coupling_strength = 0.0;       // quadratic term in the anomalies of channels c+1, c+2
  double damping = 0.0;                 // per-step relaxation toward the initial mean level
  uint64_t seed = 0;

  /// Desk defaults: four channels with distinct speeds and diffusivities.
  static DynamicsParams desk_default();

  void validate() const;
  nlohmann::json to_json() const;
  static DynamicsParams from_json(const nlohmann::json& doc);
};

/// One atmospheric snapshot, shape [C, H, W].
struct StateTensor {
  torch::Tensor values;
  int64_t time_index = 0;
  std::vector<std::string> channel_names;
};

/// A contiguous run of states stored as one [T, C, H, W] float32 tensor.
struct Trajectory {
  GridSpec grid;
  std::vector<std::string> channel_names;
  torch::Tensor states;
  int64_t start_time = 0;

  int64_t size() const { return states.defined() ? states.size(0) : 0; }
  int64_t n_channels() const { return states.size(1); }
  StateTensor at(int64_t i) const;
  /// Sub-range [begin, end) sharing storage.
  Trajectory slice(int64_t begin, int64_t end) const;
};

std::vector<std::string> default_channel_names(int64_t n_channels);

/// Seeded multi-scale initial condition: 8 Fourier modes per channel, 1/k decay.
torch::Tensor initial_condition(const GridSpec& grid, const DynamicsParams& params);

/// Evolves `n_steps` states (the first being the initial condition) under
/// semi-Lagrangian circular advection, conservative explicit diffusion,
/// seeded stochastic forcing, linear damping and quadratic channel coupling.
Trajectory simulate(const GridSpec& grid, const DynamicsParams& params, int64_t n_steps);
/// `storage` selects the dtype of the returned states (integration is always
/// double precision).
Trajectory simulate(const GridSpec& grid, const DynamicsParams& params, int64_t n_steps,
                    const torch::Tensor& initial, torch::ScalarType storage = torch::kFloat32);

/// Per-channel standardization constants.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<double> diff_stddev;  // of one-step differences

  /// Scale mapping a unit-variance network output to a normalized residual.
  std::vector<double> residual_scale() const;

  nlohmann::json to_json() const;
  static NormStats from_json(const nlohmann::json& doc);
};

NormStats fit_norm_stats(const Trajectory& trajectory);
torch::Tensor normalize(const torch::Tensor& values, const NormStats& stats);    // [..., C, H, W]
torch::Tensor denormalize(const torch::Tensor& values, const NormStats& stats);  // [..., C, H, W]
StateTensor normalize(const StateTensor& state, const NormStats& stats);
StateTensor denormalize(const StateTensor& state, const NormStats& stats);

/// Static and clock conditioning channels: sin/cos of the clock phase, a fixed
/// smooth "orography" field and a binary mask derived from it.
class ForcingBuilder {
 public:
  static constexpr int64_t kChannels = 4;

  ForcingBuilder(const GridSpec& grid, int64_t clock_period, uint64_t static_seed = 7);

  /// [F, H, W] forcings for time index t.
  torch::Tensor at(int64_t t) const;
  int64_t clock_period() const { return clock_period_; }
  uint64_t static_seed() const { return static_seed_; }

 private:
  GridSpec grid_;
  int64_t clock_period_;
  uint64_t static_seed_;
  torch::Tensor statics_;  // [2, H, W]
};

/// Network-ready sample: inputs x_{t-1}, x_t (2C channels), forcings (F
/// channels) and the residual target x_{t+1} - x_t, all normalized.
struct TrainingWindow {
  torch::Tensor states;           // [2C, H, W]
  torch::Tensor forcings;         // [F, H, W]
  torch::Tensor target_residual;  // [C, H, W]
  int64_t time_index = 0;         // t

  int64_t input_channels() const { return states.size(0) + forcings.size(0); }
  torch::Tensor network_input() const { return torch::cat({states, forcings}, 0); }
};

/// Lazy window sequence over a normalized trajectory. Read-only after
/// construction; concurrent readers are safe.
class WindowSet {
 public:
  WindowSet(const Trajectory& trajectory, const NormStats& stats, int64_t clock_period,
            uint64_t static_seed = 7);

  int64_t size() const { return normalized_.size(0) - 2; }
  int64_t n_channels() const { return normalized_.size(1); }
  int64_t input_channels() const { return 2 * n_channels() + ForcingBuilder::kChannels; }
  TrainingWindow at(int64_t i) const;

  /// Stacked network inputs [B, 2C+F, H, W] and targets [B, C, H, W].
  std::pair<torch::Tensor, torch::Tensor> batch(const std::vector<int64_t>& indices) const;

  /// Normalized state at window-relative offset (i + k): k = 1 is x_t of window i.
  torch::Tensor normalized_state(int64_t i, int64_t k) const { return normalized_[i + k]; }
  int64_t time_of(int64_t i) const { return start_time_ + i + 1; }

  const ForcingBuilder& forcings() const { return forcings_; }
  const GridSpec& grid() const { return forcings_grid_; }
  const NormStats& stats() const { return stats_; }

 private:
  torch::Tensor normalized_;  // [T, C, H, W]
  int64_t start_time_;
  NormStats stats_;
  GridSpec forcings_grid_;
  ForcingBuilder forcings_;
};

WindowSet make_windows(const Trajectory& trajectory, const NormStats& stats, int64_t clock_period,
                       uint64_t static_seed = 7);

/// Chronological 80/10/10 split over state indices.
struct SplitRanges {
  int64_t train_begin, train_end, val_begin, val_end, test_begin, test_end;
};
SplitRanges split_ranges(int64_t n_states);

/// Trajectory directory: manifest.json + chunk_NNNNN.f32 files of up to 256 steps.
inline constexpr int64_t kTrajectoryChunk = 256;
inline constexpr int kTrajectoryFormatVersion = 1;

struct TrajectoryManifest {
  GridSpec grid;
  DynamicsParams params;
  std::vector<std::string> channel_names;
  NormStats stats;
  int64_t n_steps = 0;
  int64_t clock_period = 0;
  uint64_t static_seed = 7;
};

void save_trajectory(const std::filesystem::path& dir, const Trajectory& trajectory,
                     const TrajectoryManifest& manifest);
TrajectoryManifest read_trajectory_manifest(const std::filesystem::path& dir);
Trajectory load_trajectory(const std::filesystem::path& dir);

}  // namespace toycast
