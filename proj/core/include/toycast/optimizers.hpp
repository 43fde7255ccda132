#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace toycast {

struct OptimConfig {
  double muon_peak_lr = 3e-3;
  double adamw_peak_lr = 3e-4;
  double muon_weight_decay = 0.1;
  double adamw_weight_decay = 0.03;
  int64_t warmup_steps = 1500;
  int64_t total_steps = 10000;
  double momentum = 0.95;
  bool nesterov = true;
  int64_t ns_iterations = 5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double adam_eps = 1e-8;
  double ema_decay = 0.9999;
  /// false = AdamW for every parameter (optimizer ablation).
  bool use_muon = true;
  /// Route the final output convolution to AdamW as well.
  bool adamw_for_output_layer = false;

  /// Deterministic pre-training regime: Muon 3e-3 / AdamW 3e-4, decay 0.1 / 0.03.
  static OptimConfig stage1_full();
  /// Probabilistic fine-tuning regime: Muon 7e-3 / AdamW 7e-5.
  static OptimConfig stage2_full();

  void validate() const;
  nlohmann::json to_json() const;
  static OptimConfig from_json(const nlohmann::json& doc);
};

enum class ParamGroup { muon, adamw };

/// Linear warmup from 0 to 1 over warmup_steps, then cosine decay to 0 at
/// total_steps. Steps past total_steps clamp to 0.
double schedule_factor(int64_t step, int64_t warmup_steps, int64_t total_steps);
double lr_at(int64_t step, const OptimConfig& config, ParamGroup group = ParamGroup::muon);

/// Quintic Newton-Schulz approximation of the orthogonal polar factor U V^T.
/// An all-zero input is returned unchanged and `was_zero` (if given) is set.
torch::Tensor newton_schulz_orthogonalize(const torch::Tensor& matrix, int64_t iterations = 5,
                                          bool* was_zero = nullptr);

/// Newton-Schulz coefficients (a, b, c) from the Muon reference implementation.
inline constexpr double kNsA = 3.4445;
inline constexpr double kNsB = -4.7750;
inline constexpr double kNsC = 2.0315;

/// ema <- decay * ema + (1 - decay) * current, in place.
void ema_update(std::vector<torch::Tensor>& ema, const std::vector<torch::Tensor>& current, double decay);

struct NamedTensor {
  std::string name;
  torch::Tensor tensor;
};

/// Muon for >= 2-D parameters, AdamW for 1-D ones. Reads `.grad()` of each
/// parameter. Single writer; call step() after gradients are final.
class HybridOptimizer {
 public:
  HybridOptimizer(std::vector<NamedTensor> params, OptimConfig config);

  /// Applies one update with learning rates lr_at(step_index). Throws
  /// NumericError naming the parameter if any gradient is non-finite.
  void step(int64_t step_index);
  void zero_grad();

  ParamGroup group_of(const std::string& name) const;
  const OptimConfig& config() const { return config_; }
  int64_t updates_applied() const { return updates_; }
  /// Parameters whose orthogonalized update was zero on the last step.
  const std::vector<std::string>& zero_updates() const { return zero_updates_; }

  /// Named state arrays (momentum / Adam moments / counters) for checkpoints.
  std::vector<std::pair<std::string, torch::Tensor>> state_arrays() const;
  void load_state_arrays(const std::vector<std::pair<std::string, torch::Tensor>>& arrays);

 private:
  struct Slot {
    std::string name;
    torch::Tensor param;
    ParamGroup group;
    torch::Tensor momentum;  // Muon
    torch::Tensor exp_avg;   // AdamW
    torch::Tensor exp_avg_sq;
  };

  OptimConfig config_;
  std::vector<Slot> slots_;
  int64_t updates_ = 0;
  std::vector<std::string> zero_updates_;
};

/// Exponential moving average of a parameter set, with the usual
/// min(decay, (1 + n) / (10 + n)) warmup so early averages are not dominated
/// by the initialization.
class EmaTracker {
 public:
  EmaTracker() = default;
  EmaTracker(const std::vector<NamedTensor>& params, double decay, bool warmup = true);

  void update(const std::vector<NamedTensor>& params);
  double effective_decay() const;

  const std::vector<NamedTensor>& averages() const { return averages_; }
  std::vector<NamedTensor>& averages() { return averages_; }
  int64_t updates() const { return updates_; }
  void set_updates(int64_t n) { updates_ = n; }
  double decay() const { return decay_; }
  bool warmup() const { return warmup_; }

 private:
  std::vector<NamedTensor> averages_;
  double decay_ = 0.9999;
  bool warmup_ = true;
  int64_t updates_ = 0;
};

}  // namespace toycast
