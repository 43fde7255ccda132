#pragma once

#include <vector>

#include <torch/torch.h>

#include "toycast/grid.hpp"

namespace toycast {

/// Nonnegative per-channel loss weights; at least one must be positive.
struct ChannelWeights {
  std::vector<double> w;

  static ChannelWeights uniform(int64_t n_channels);
  void validate(int64_t n_channels) const;
};

/// Scalar loss plus its decomposition. `loss` is the differentiable total;
/// the doubles are detached copies for logging.
struct LossBreakdown {
  torch::Tensor loss;
  double total = 0.0;
  std::vector<double> per_channel;
  double skill_term = 0.0;
  double spread_term = 0.0;
};

/// How the pairwise member distance in the spread term is summed.
enum class SpreadEstimator {
  pairwise,  // O(M^2) differences; subgradient sign(0) = 0 at ties
  sorted,    // O(M log M) via order statistics; for large ensembles
};

/// delta_{h,w}(u, v): absolute difference summed over the channel axis
/// (dimension -3), or kept per channel. Shapes must match; [..., C, H, W].
torch::Tensor pointwise_l1(const torch::Tensor& u, const torch::Tensor& v, bool per_channel = false);

/// Area-weighted MAE, (1/HW) sum_{h,w} a_h |pred - target|, per channel, then
/// combined as the ChannelWeights-weighted mean over channels. Leading batch
/// dimensions are averaged.
LossBreakdown weighted_mae(const torch::Tensor& prediction, const torch::Tensor& target,
                           const AreaWeights& weights, const ChannelWeights& channel_weights);

/// Fair (unbiased) CRPS of an ensemble. `members` is [M, ...target shape]
/// with M >= 2; Skill = mean_m |x_m - y|, Spread = sum_{m != n} |x_m - x_n| /
/// (M (M - 1)), CRPS = Skill - Spread / 2, area-weighted and channel-weighted
/// as in weighted_mae. Differentiable with respect to `members`.
LossBreakdown fair_crps(const torch::Tensor& members, const torch::Tensor& target,
                        const AreaWeights& weights, const ChannelWeights& channel_weights,
                        SpreadEstimator estimator = SpreadEstimator::pairwise);

}  // namespace toycast
