#include "toycast/objectives.hpp"

#include "toycast/error.hpp"

namespace toycast {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    throw InvalidArgument(std::string(what) + ": shape mismatch " + c10::str(a.sizes()) + " vs " +
                          c10::str(b.sizes()));
  }
}

void require_grid_shape(const torch::Tensor& t, const AreaWeights& weights) {
  if (t.dim() < 3) throw InvalidArgument("fields must be [..., C, H, W]");
  if (t.size(-2) != static_cast<int64_t>(weights.normalized.size())) {
    throw InvalidArgument("latitude dimension " + std::to_string(t.size(-2)) + " does not match " +
                          std::to_string(weights.normalized.size()) + " area weights");
  }
}

// Reduces a [..., C, H, W] field to per-channel area-weighted means [C].
torch::Tensor area_mean_per_channel(const torch::Tensor& field, const AreaWeights& weights) {
  const auto a = weights.column(field.scalar_type()).to(field.device());
  auto weighted = field * a;
  const auto C = field.size(-3);
  return weighted.reshape({-1, C, field.size(-2) * field.size(-1)}).mean(std::vector<int64_t>{0, 2});
}

torch::Tensor channel_combine(const torch::Tensor& per_channel, const ChannelWeights& cw) {
  auto w = torch::tensor(cw.w, torch::kFloat64).to(per_channel.scalar_type());
  return (per_channel * w).sum() / w.sum();
}

std::vector<double> to_vector(const torch::Tensor& t) {
  auto d = t.detach().to(torch::kFloat64).contiguous();
  return std::vector<double>(d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
}

}  // namespace

ChannelWeights ChannelWeights::uniform(int64_t n_channels) {
  return ChannelWeights{std::vector<double>(static_cast<std::size_t>(n_channels), 1.0)};
}

void ChannelWeights::validate(int64_t n_channels) const {
  if (static_cast<int64_t>(w.size()) != n_channels) {
    throw InvalidArgument("channel weights have " + std::to_string(w.size()) + " entries, expected " +
                          std::to_string(n_channels));
  }
  bool positive = false;
  for (double x : w) {
    if (!(x >= 0.0)) throw InvalidArgument("channel weights must be nonnegative");
    positive = positive || x > 0.0;
  }
  if (!positive) throw InvalidArgument("at least one channel weight must be positive");
}

torch::Tensor pointwise_l1(const torch::Tensor& u, const torch::Tensor& v, bool per_channel) {
  require_same_shape(u, v, "pointwise_l1");
  auto d = (u - v).abs();
  return per_channel ? d : d.sum(-3);
}

LossBreakdown weighted_mae(const torch::Tensor& prediction, const torch::Tensor& target,
                           const AreaWeights& weights, const ChannelWeights& channel_weights) {
  require_same_shape(prediction, target, "weighted_mae");
  require_grid_shape(target, weights);
  channel_weights.validate(target.size(-3));

  const auto per_channel = area_mean_per_channel(pointwise_l1(prediction, target, true), weights);
  LossBreakdown out;
  out.loss = channel_combine(per_channel, channel_weights);
  out.total = out.loss.item<double>();
  out.per_channel = to_vector(per_channel);
  out.skill_term = out.total;
  out.spread_term = 0.0;
  return out;
}

LossBreakdown fair_crps(const torch::Tensor& members, const torch::Tensor& target,
                        const AreaWeights& weights, const ChannelWeights& channel_weights,
                        SpreadEstimator estimator) {
  if (members.dim() != target.dim() + 1) {
    throw InvalidArgument("members must be [M, ...target shape]");
  }
  const auto M = members.size(0);
  if (M < 2) {
    throw InvalidArgument("fair CRPS needs at least 2 members (the M - 1 spread divisor vanishes), got " +
                          std::to_string(M));
  }
  require_same_shape(members[0], target, "fair_crps");
  require_grid_shape(target, weights);
  channel_weights.validate(target.size(-3));

  const auto skill = (members - target.unsqueeze(0)).abs().mean(0);

  torch::Tensor pair_sum;  // sum over ordered pairs m != n of |x_m - x_n|
  if (estimator == SpreadEstimator::pairwise) {
    pair_sum = torch::zeros_like(target);
    for (int64_t m = 0; m < M; ++m) {
      for (int64_t n = m + 1; n < M; ++n) pair_sum = pair_sum + (members[m] - members[n]).abs();
    }
    pair_sum = 2.0 * pair_sum;
  } else {
    // sum_{m,n} |x_m - x_n| = 2 sum_i (2i - M + 1) x_(i) over ascending order statistics.
    const auto sorted = std::get<0>(members.sort(0));
    auto coeff = torch::arange(M, members.options()) * 2.0 - static_cast<double>(M - 1);
    std::vector<int64_t> shape(static_cast<std::size_t>(members.dim()), 1);
    shape[0] = M;
    pair_sum = 2.0 * (sorted * coeff.view(shape)).sum(0);
  }
  const auto spread = pair_sum / static_cast<double>(M * (M - 1));

  const auto skill_c = area_mean_per_channel(skill, weights);
  const auto spread_c = area_mean_per_channel(spread, weights);
  const auto per_channel = skill_c - 0.5 * spread_c;

  LossBreakdown out;
  out.loss = channel_combine(per_channel, channel_weights);
  out.total = out.loss.item<double>();
  out.per_channel = to_vector(per_channel);
  out.skill_term = channel_combine(skill_c, channel_weights).item<double>();
  out.spread_term = channel_combine(spread_c, channel_weights).item<double>();
  return out;
}

}  // namespace toycast
