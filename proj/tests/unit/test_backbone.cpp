#include <gtest/gtest.h>

#include <cmath>
#include <future>

#include "toycast/backbone.hpp"
#include "toycast/error.hpp"

using namespace toycast;

namespace {

ModelConfig small(StochasticMode mode = StochasticMode::dropout) {
  auto cfg = ModelConfig::desk(4);
  cfg.base_width = 16;
  cfg.channel_multipliers = {1, 2, 2};
  cfg.blocks_per_resolution = 1;
  cfg.attention_levels = {0};
  cfg.channels_per_head = 16;
  cfg.stochastic_mode = mode;
  return cfg;
}

torch::Tensor input_for(const ModelConfig& cfg, int64_t B, int64_t H, int64_t W, uint64_t seed = 1) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::randn({B, cfg.in_channels, H, W}, gen);
}

}  // namespace

TEST(Backbone, DeskOutputShape) {
  const auto cfg = ModelConfig::desk(4);
  auto model = build(cfg, make_equiangular_grid(32, 64));
  torch::NoGradGuard g;
  const auto y = model->forward(input_for(cfg, 2, 32, 64), StochasticTag{});
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{2, 4, 32, 64}));
}

TEST(Backbone, NonPowerOfTwoGrid) {
  const auto cfg = ModelConfig::desk(4);
  auto model = build(cfg, make_equiangular_grid(30, 64));
  torch::NoGradGuard g;
  const auto y = model->forward(input_for(cfg, 1, 30, 64), StochasticTag{});
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{1, 4, 30, 64}));
}

TEST(Backbone, OddSizesMatchInput) {
  auto cfg = small();
  for (auto [H, W] : {std::pair<int64_t, int64_t>{9, 20}, {13, 12}, {4, 4}}) {
    auto model = build(cfg, make_equiangular_grid(H, W));
    torch::NoGradGuard g;
    const auto y = model->forward(input_for(cfg, 1, H, W), StochasticTag{});
    EXPECT_EQ(y.sizes(), (std::vector<int64_t>{1, 4, H, W}));
  }
}

TEST(Backbone, ChannelMismatchThrows) {
  auto cfg = small();
  auto model = build(cfg, make_equiangular_grid(8, 16));
  EXPECT_THROW(model->forward(torch::randn({1, cfg.in_channels + 1, 8, 16}), StochasticTag{}), InvalidArgument);
}

TEST(Backbone, DeterministicWhenDisabled) {
  auto cfg = small();
  cfg.zero_init_output = false;
  auto model = build(cfg, make_equiangular_grid(8, 16));
  torch::NoGradGuard g;
  const auto x = input_for(cfg, 2, 8, 16);
  EXPECT_TRUE(torch::equal(model->forward(x, StochasticTag{5, false}), model->forward(x, StochasticTag{5, false})));
}

TEST(Backbone, SameSeedSameMask) {
  auto cfg = small();
  cfg.zero_init_output = false;
  auto model = build(cfg, make_equiangular_grid(8, 16));
  randomize_parameters(*model, 3);
  torch::NoGradGuard g;
  const auto x = input_for(cfg, 2, 8, 16);
  const auto a = model->forward(x, StochasticTag{42, true});
  EXPECT_TRUE(torch::equal(a, model->forward(x, StochasticTag{42, true})));
  EXPECT_FALSE(torch::equal(a, model->forward(x, StochasticTag{43, true})));
  EXPECT_FALSE(torch::equal(a, model->forward(x, StochasticTag{42, false})));
}

TEST(Backbone, ConcurrentForwardIsOrderIndependent) {
  auto cfg = small();
  cfg.zero_init_output = false;
  auto model = build(cfg, make_equiangular_grid(8, 16));
  randomize_parameters(*model, 4);
  torch::NoGradGuard g;
  const auto x = input_for(cfg, 1, 8, 16);
  const auto ref7 = model->forward(x, StochasticTag{7, true});
  const auto ref8 = model->forward(x, StochasticTag{8, true});
  auto f8 = std::async(std::launch::async, [&] {
    torch::NoGradGuard inner;
    return model->forward(x, StochasticTag{8, true});
  });
  auto f7 = std::async(std::launch::async, [&] {
    torch::NoGradGuard inner;
    return model->forward(x, StochasticTag{7, true});
  });
  EXPECT_TRUE(torch::equal(f7.get(), ref7));
  EXPECT_TRUE(torch::equal(f8.get(), ref8));
}

TEST(Backbone, AdalnZeroInitMatchesDeterministic) {
  const auto grid = make_equiangular_grid(8, 16);
  auto det_cfg = small(StochasticMode::deterministic);
  det_cfg.zero_init_output = false;
  auto ada_cfg = det_cfg;
  ada_cfg.stochastic_mode = StochasticMode::adaln_noise;
  auto det = build(det_cfg, grid);
  auto ada = build(ada_cfg, grid);
  torch::NoGradGuard g;
  const auto x = input_for(det_cfg, 3, 8, 16);
  const auto ref = det->forward(x, StochasticTag{});
  EXPECT_GT(ref.abs().max().item<double>(), 0.0);
  for (uint64_t seed : {1u, 99u, 12345u}) {
    const auto y = ada->forward(x, StochasticTag{seed, true});
    EXPECT_LT((y - ref).abs().max().item<double>(), 1e-6);
  }
}

TEST(Backbone, CircularShiftEquivariance) {
  auto cfg = small(StochasticMode::deterministic);
  cfg.attention_levels = {};
  cfg.zero_init_output = false;
  auto model = build(cfg, make_equiangular_grid(8, 32));
  randomize_parameters(*model, 9, 0.1);
  torch::NoGradGuard g;
  const auto x = input_for(cfg, 1, 8, 32);
  const auto s = cfg.total_stride();
  const auto a = torch::roll(model->forward(x, StochasticTag{}), {s}, {-1});
  const auto b = model->forward(torch::roll(x, {s}, {-1}), StochasticTag{});
  EXPECT_LT((a - b).abs().max().item<double>(), 1e-4);
}

TEST(Backbone, FullScaleParameterCount) {
  const auto n = count_parameters(ModelConfig::full_scale(), make_equiangular_grid(121, 240));
  EXPECT_GT(n, 0.85 * 895e6);
  EXPECT_LT(n, 1.15 * 895e6);
}

TEST(Backbone, AdalnAddsParameters) {
  auto cfg = ModelConfig::full_scale();
  const auto grid = make_equiangular_grid(121, 240);
  const double base = static_cast<double>(count_parameters(cfg, grid));
  cfg.stochastic_mode = StochasticMode::adaln_noise;
  const double ada = static_cast<double>(count_parameters(cfg, grid));
  EXPECT_GT(ada, base);
  EXPECT_GE((ada - base) / base, 0.03);
  EXPECT_LE((ada - base) / base, 0.15);
}

TEST(Backbone, ShapeOnlyModelRefusesForward) {
  auto model = build(small(), make_equiangular_grid(8, 16), BuildOptions{true});
  EXPECT_TRUE(model->shape_only());
  EXPECT_GT(model->parameter_count(), 0);
  EXPECT_ANY_THROW(model->forward(torch::zeros({1, small().in_channels, 8, 16}), StochasticTag{}));
}

TEST(Backbone, InitIsSeededByName) {
  const auto grid = make_equiangular_grid(8, 16);
  auto a = build(small(), grid), b = build(small(), grid);
  const auto pa = a->named_parameter_list(), pb = b->named_parameter_list();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_TRUE(torch::equal(pa[i].second, pb[i].second));
  }
}

TEST(Backbone, ZeroInitOutputGivesZeroResidual) {
  auto model = build(small(), make_equiangular_grid(8, 16));
  torch::NoGradGuard g;
  EXPECT_EQ(model->forward(input_for(small(), 1, 8, 16), StochasticTag{1, true}).abs().max().item<double>(), 0.0);
}

TEST(Backbone, GradientMatchesFiniteDifferences) {
  auto cfg = small(StochasticMode::deterministic);
  cfg.zero_init_output = false;
  auto model = build(cfg, make_equiangular_grid(8, 8));
  randomize_parameters(*model, 11, 0.1);
  model->to(torch::kFloat64);
  const auto x = input_for(cfg, 1, 8, 8).to(torch::kFloat64);
  auto params = model->named_parameter_list();
  auto& w = params[2].second;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(12);
  const auto dir = torch::randn(w.sizes(), gen, torch::kFloat64);
  model->zero_grad();
  model->forward(x, StochasticTag{}).sum().backward();
  const double analytic = (w.grad() * dir).sum().item<double>();
  const double eps = 1e-5;
  double plus, minus;
  {
    torch::NoGradGuard g;
    w.add_(dir * eps);
    plus = model->forward(x, StochasticTag{}).sum().item<double>();
    w.sub_(dir * (2 * eps));
    minus = model->forward(x, StochasticTag{}).sum().item<double>();
    w.add_(dir * eps);
  }
  const double fd = (plus - minus) / (2 * eps);
  EXPECT_NEAR(analytic, fd, 1e-3 * std::abs(fd));
}

TEST(Backbone, ConfigValidation) {
  auto cfg = small();
  cfg.dropout_rate = 1.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = small();
  cfg.attention_levels = {5};
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  const auto back = ModelConfig::from_json(small().to_json());
  EXPECT_EQ(back.to_json(), small().to_json());
}
