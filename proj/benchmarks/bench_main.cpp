#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "toycast/backbone.hpp"
#include "toycast/grid.hpp"
#include "toycast/objectives.hpp"
#include "toycast/optimizers.hpp"

using namespace toycast;

namespace {

void BM_FairCrps(benchmark::State& state) {
  const int64_t M = state.range(0);
  const auto grid = make_equiangular_grid(32, 64);
  const auto aw = area_weights(grid);
  const auto cw = ChannelWeights::uniform(4);
  const auto members = torch::randn({M, 4, 32, 64});
  const auto target = torch::randn({4, 32, 64});
  for (auto _ : state) benchmark::DoNotOptimize(fair_crps(members, target, aw, cw).total);
}
BENCHMARK(BM_FairCrps)->Arg(2)->Arg(4)->Arg(8)->Arg(16);

void BM_NewtonSchulz(benchmark::State& state) {
  const int64_t n = state.range(0);
  const auto m = torch::randn({n, 2 * n});
  for (auto _ : state) benchmark::DoNotOptimize(newton_schulz_orthogonalize(m));
}
BENCHMARK(BM_NewtonSchulz)->Arg(32)->Arg(128)->Arg(256);

void BM_DeskForward(benchmark::State& state) {
  const auto cfg = ModelConfig::desk(4);
  auto model = build(cfg, make_equiangular_grid(32, 64));
  torch::NoGradGuard g;
  const auto x = torch::randn({state.range(0), cfg.in_channels, 32, 64});
  for (auto _ : state) benchmark::DoNotOptimize(model->forward(x, StochasticTag{1, true}));
}
BENCHMARK(BM_DeskForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
