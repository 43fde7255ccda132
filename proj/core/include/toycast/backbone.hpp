#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "toycast/grid.hpp"
#include "toycast/toyatmos.hpp"

namespace toycast {

enum class StochasticMode { dropout, adaln_noise, deterministic };

std::string to_string(StochasticMode mode);
StochasticMode stochastic_mode_from_string(const std::string& name);

/// Architecture hyperparameters for the encoder-decoder backbone.
struct ModelConfig {
  int64_t in_channels = 12;   // 2C + F
  int64_t out_channels = 4;   // C
  int64_t base_width = 32;
  std::vector<int64_t> channel_multipliers{1, 2, 3, 4};
  int64_t blocks_per_resolution = 2;
  /// Resolution indices with self-attention, coarsest-first (0 = coarsest).
  std::vector<int64_t> attention_levels{0, 1};
  double dropout_rate = 0.1;
  StochasticMode stochastic_mode = StochasticMode::dropout;
  int64_t noise_dim = 32;
  int64_t channels_per_head = 64;
  int64_t embedding_multiplier = 4;  // adaLN mapping width = base_width * this
  bool zero_init_output = true;
  uint64_t init_seed = 0;

  /// 895M-class configuration: width 320, multipliers 1-2-3-4, 4 blocks per
  /// resolution, 172 inputs / 83 outputs, attention on the two coarsest levels.
  static ModelConfig full_scale();
  /// Small configuration for a workstation.
  static ModelConfig desk(int64_t n_channels, int64_t n_forcings = ForcingBuilder::kChannels);

  int64_t n_levels() const { return static_cast<int64_t>(channel_multipliers.size()); }
  /// Product of the encoder's downsampling factors (2 per level transition).
  int64_t total_stride() const { return int64_t{1} << (n_levels() - 1); }

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& doc);
};

/// Selects the dropout masks or adaLN noise vector for one sample.
struct StochasticTag {
  uint64_t member_seed = 0;
  bool enabled = false;
};

struct BuildOptions {
  /// Allocate parameters on the meta device: shapes only, no storage, no forward.
  bool shape_only = false;
};

namespace detail {

/// Per-call state threaded through the blocks.
struct ForwardContext {
  std::span<const StochasticTag> tags;
  torch::Tensor embedding;  // [B, E] in adaln_noise mode, undefined otherwise
};

/// 3x3 (or 1x1) convolution; circular padding along longitude (last axis),
/// zero padding along latitude.
class PeriodicConvImpl : public torch::nn::Module {
 public:
  PeriodicConvImpl(int64_t in, int64_t out, int64_t kernel, const torch::TensorOptions& opts);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight, bias;

 private:
  int64_t kernel_;
};
TORCH_MODULE(PeriodicConv);

class GroupNormLayerImpl : public torch::nn::Module {
 public:
  GroupNormLayerImpl(int64_t channels, const torch::TensorOptions& opts);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight, bias;
  int64_t groups;
};
TORCH_MODULE(GroupNormLayer);

class LinearLayerImpl : public torch::nn::Module {
 public:
  LinearLayerImpl(int64_t in, int64_t out, const torch::TensorOptions& opts);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight, bias;
};
TORCH_MODULE(LinearLayer);

enum class Resample { none, down, up };

/// Residual block: GN-SiLU-(resample)-conv, [adaLN], GN-SiLU, dropout, conv,
/// skip; optional multi-head self-attention afterwards.
class UNetBlockImpl : public torch::nn::Module {
 public:
  UNetBlockImpl(int64_t in, int64_t out, Resample resample, bool attention, const ModelConfig& cfg,
                int64_t dropout_layer_id, const torch::TensorOptions& opts);
  /// `target` gives the spatial size for Resample::up.
  torch::Tensor forward(const torch::Tensor& x, const ForwardContext& ctx,
                        std::pair<int64_t, int64_t> target = {0, 0});

  int64_t out_channels() const { return out_; }

 private:
  torch::Tensor resample(const torch::Tensor& x, std::pair<int64_t, int64_t> target) const;
  torch::Tensor dropout(const torch::Tensor& x, const ForwardContext& ctx) const;

  int64_t in_, out_;
  Resample mode_;
  int64_t heads_ = 0;
  double dropout_rate_;
  bool adaptive_;
  int64_t dropout_layer_id_;

  GroupNormLayer norm0_{nullptr}, norm1_{nullptr}, norm2_{nullptr};
  PeriodicConv conv0_{nullptr}, conv1_{nullptr}, skip_{nullptr}, qkv_{nullptr}, proj_{nullptr};
  LinearLayer affine_{nullptr};
};
TORCH_MODULE(UNetBlock);

}  // namespace detail

/// Encoder-decoder backbone predicting the normalized residual x_{t+1} - x_t.
///
/// Layout per resolution level (finest = level 0 in storage order): an input
/// conv (level 0) or a downsampling block, then `blocks_per_resolution`
/// residual blocks; the decoder mirrors it with one extra block per level fed
/// by skip connections, bilinearly upsampling to each skip's exact shape.
class UNetImpl : public torch::nn::Module {
 public:
  UNetImpl(const ModelConfig& config, const GridSpec& grid, BuildOptions options = {});

  /// `input` is [B, in_channels, H, W]; `tags` has one entry per sample.
  torch::Tensor forward(const torch::Tensor& input, std::span<const StochasticTag> tags);
  /// Convenience: the same tag expanded to per-sample sub-seeds.
  torch::Tensor forward(const torch::Tensor& input, const StochasticTag& tag);

  const ModelConfig& config() const { return config_; }
  const GridSpec& grid() const { return grid_; }
  bool shape_only() const { return shape_only_; }

  /// Output multiplier per channel (normalized residual scale); a buffer.
  void set_residual_scale(const std::vector<double>& scale);

  /// Parameters in registration order with stable dotted names.
  std::vector<std::pair<std::string, torch::Tensor>> named_parameter_list() const;
  int64_t parameter_count() const;

 private:
  ModelConfig config_;
  GridSpec grid_;
  bool shape_only_;

  torch::nn::Sequential mapping_{nullptr};  // adaLN noise mapping
  detail::PeriodicConv input_conv_{nullptr};
  std::vector<detail::UNetBlock> encoder_;
  std::vector<int> encoder_level_;
  std::vector<detail::UNetBlock> decoder_;
  std::vector<bool> decoder_takes_skip_;
  detail::GroupNormLayer out_norm_{nullptr};
  detail::PeriodicConv out_conv_{nullptr};
  torch::Tensor residual_scale_;
};
TORCH_MODULE(UNet);

/// Builds and initializes a model. Initial values are keyed by
/// (init_seed, parameter name), so two models that share a parameter name
/// share its initial value regardless of mode.
UNet build(const ModelConfig& config, const GridSpec& grid, BuildOptions options = {});

/// Shape-only parameter count (no storage allocated).
int64_t count_parameters(const ModelConfig& config, const GridSpec& grid);

/// Re-draws every parameter from a seeded uniform(-scale, scale); used to get
/// non-trivial outputs in tests.
void randomize_parameters(UNetImpl& model, uint64_t seed, double scale = 0.2);

/// Single-window prediction of the normalized residual.
StateTensor forward(UNetImpl& model, const TrainingWindow& window, const StochasticTag& tag);

/// Per-sample tags for `batch` samples derived from one base seed.
std::vector<StochasticTag> expand_tags(const StochasticTag& tag, int64_t batch);

}  // namespace toycast
