#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "toycast/error.hpp"
#include "toycast/toyatmos.hpp"

using namespace toycast;

namespace {

DynamicsParams frozen(int64_t C = 2) {
  DynamicsParams p;
  p.n_channels = C;
  p.advection_speed.assign(C, 0.0);
  p.diffusion_coeff.assign(C, 0.0);
  p.seed = 3;
  return p;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("toycast_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Simulate, FrozenDynamicsKeepInitialState) {
  const auto g = make_equiangular_grid(8, 16);
  const auto traj = simulate(g, frozen(), 6);
  ASSERT_EQ(traj.size(), 6);
  for (int64_t t = 1; t < 6; ++t) EXPECT_TRUE(torch::equal(traj.states[t], traj.states[0]));
}

TEST(Simulate, UnitAdvectionIsCircularShift) {
  const auto g = make_equiangular_grid(6, 16);
  auto p = frozen(2);
  p.advection_speed = {1.0, 1.0};
  const auto traj = simulate(g, p, 10);
  const auto init = oracle::to_vec(traj.states[0]);
  for (int64_t k = 1; k < 10; ++k) {
    const auto got = oracle::to_vec(traj.states[k]);
    for (int64_t c = 0; c < 2; ++c) {
      for (int64_t h = 0; h < 6; ++h) {
        for (int64_t w = 0; w < 16; ++w) {
          const int64_t src = ((w - k) % 16 + 16) % 16;
          ASSERT_NEAR(got[(c * 6 + h) * 16 + w], init[(c * 6 + h) * 16 + src], 1e-6);
        }
      }
    }
  }
}

TEST(Simulate, DiffusionConservesAreaWeightedMean) {
  const auto g = make_equiangular_grid(10, 20);
  auto p = frozen(2);
  p.diffusion_coeff = {0.2, 0.1};
  const auto traj = simulate(g, p, 8, initial_condition(g, p), torch::kFloat64);
  const auto a = area_weights(g);
  for (int64_t c = 0; c < 2; ++c) {
    double prev = 0.0;
    for (int64_t t = 0; t < 8; ++t) {
      const auto v = oracle::to_vec(traj.states[t][c]);
      double mean = 0.0;
      for (int64_t h = 0; h < 10; ++h) {
        for (int64_t w = 0; w < 20; ++w) mean += a.raw[h] * v[h * 20 + w];
      }
      if (t > 0) EXPECT_NEAR(mean, prev, 1e-10);
      prev = mean;
    }
  }
}

TEST(Simulate, BitReproducible) {
  const auto g = make_equiangular_grid(8, 16);
  const auto p = DynamicsParams::desk_default();
  EXPECT_TRUE(torch::equal(simulate(g, p, 30).states, simulate(g, p, 30).states));
}

TEST(Simulate, ShiftEquivariance) {
  const auto g = make_equiangular_grid(8, 16);
  auto p = DynamicsParams::desk_default();
  p.forcing_amplitude = 0.0;
  const auto init = initial_condition(g, p);
  const auto a = simulate(g, p, 12, init);
  const auto b = simulate(g, p, 12, torch::roll(init, {5}, {-1}));
  EXPECT_TRUE(torch::equal(torch::roll(a.states, {5}, {-1}), b.states));
}

TEST(Simulate, DeskDefaultStaysBounded) {
  const auto g = make_equiangular_grid(16, 32);
  const auto traj = simulate(g, DynamicsParams::desk_default(), 1500);
  EXPECT_TRUE(torch::isfinite(traj.states).all().item<bool>());
  EXPECT_LT(traj.states.abs().max().item<double>(), 50.0);
}

TEST(Simulate, StabilityViolationThrows) {
  auto p = frozen(2);
  p.diffusion_coeff = {0.3, 0.0};
  EXPECT_THROW(simulate(make_equiangular_grid(4, 8), p, 3), InvalidArgument);
  p.diffusion_coeff = {-0.1, 0.0};
  EXPECT_THROW(simulate(make_equiangular_grid(4, 8), p, 3), InvalidArgument);
}

TEST(Windows, ThreeStatesGiveOneWindow) {
  const auto g = make_equiangular_grid(4, 8);
  const auto traj = simulate(g, DynamicsParams::desk_default(), 3);
  const auto stats = fit_norm_stats(simulate(g, DynamicsParams::desk_default(), 20));
  EXPECT_EQ(make_windows(traj, stats, 24).size(), 1);
}

TEST(Windows, TooShortTrajectoryThrows) {
  const auto g = make_equiangular_grid(4, 8);
  const auto stats = fit_norm_stats(simulate(g, DynamicsParams::desk_default(), 20));
  EXPECT_THROW(make_windows(simulate(g, DynamicsParams::desk_default(), 2), stats, 24), InvalidArgument);
}

TEST(Windows, ConstantTrajectoryHasZeroResidual) {
  const auto g = make_equiangular_grid(4, 8);
  const auto traj = simulate(g, frozen(2), 6);
  NormStats stats{{0.0, 0.0}, {1.0, 1.0}, {1.0, 1.0}};
  const auto ws = make_windows(traj, stats, 24);
  for (int64_t i = 0; i < ws.size(); ++i) EXPECT_EQ(ws.at(i).target_residual.abs().max().item<double>(), 0.0);
}

TEST(Windows, ResidualIsDifferenceOfNormalizedStates) {
  const auto g = make_equiangular_grid(4, 8);
  const auto traj = simulate(g, DynamicsParams::desk_default(), 12);
  const auto stats = fit_norm_stats(traj);
  const auto ws = make_windows(traj, stats, 24);
  const auto w = ws.at(3);
  const auto x = normalize(traj.states, stats);
  EXPECT_TRUE(torch::allclose(w.target_residual, x[5] - x[4], 1e-6, 1e-6));
  EXPECT_TRUE(torch::allclose(w.states, torch::cat({x[3], x[4]}, 0), 1e-6, 1e-6));
  EXPECT_EQ(w.input_channels(), 2 * 4 + ForcingBuilder::kChannels);
  EXPECT_EQ(w.time_index, 4);
}

TEST(Windows, ClockForcingIsPeriodic) {
  const auto g = make_equiangular_grid(4, 8);
  ForcingBuilder f(g, 24);
  EXPECT_TRUE(torch::allclose(f.at(5), f.at(5 + 24), 1e-6, 1e-6));
  EXPECT_FALSE(torch::allclose(f.at(5), f.at(11)));
  EXPECT_EQ(f.at(0).size(0), ForcingBuilder::kChannels);
}

TEST(Windows, NoFutureLeakInInputs) {
  const auto g = make_equiangular_grid(4, 8);
  const auto traj = simulate(g, DynamicsParams::desk_default(), 12);
  const auto stats = fit_norm_stats(traj);
  auto altered = traj;
  altered.states = traj.states.clone();
  altered.states[6].add_(1.0);
  const auto a = make_windows(traj, stats, 24), b = make_windows(altered, stats, 24);
  // window 4 has t = 5: inputs x_4, x_5; x_6 only enters the target
  EXPECT_TRUE(torch::equal(a.at(4).states, b.at(4).states));
  EXPECT_FALSE(torch::equal(a.at(4).target_residual, b.at(4).target_residual));
}

TEST(NormStatsTest, ConstantChannelThrows) {
  const auto g = make_equiangular_grid(4, 8);
  auto traj = simulate(g, DynamicsParams::desk_default(), 10);
  traj.states = traj.states.clone();
  traj.states.select(1, 2).fill_(1.5);
  EXPECT_THROW(fit_norm_stats(traj), InvalidArgument);
}

TEST(NormStatsTest, StandardizesFittingSet) {
  const auto g = make_equiangular_grid(8, 16);
  const auto traj = simulate(g, DynamicsParams::desk_default(), 40);
  const auto stats = fit_norm_stats(traj);
  const auto z = normalize(traj.states.to(torch::kFloat64), stats);
  for (int64_t c = 0; c < 4; ++c) {
    const auto ch = z.select(1, c);
    EXPECT_LT(std::abs(ch.mean().item<double>()), 1e-6);
    EXPECT_LT(std::abs(ch.std(false).item<double>() - 1.0), 1e-6);
  }
  for (double s : stats.diff_stddev) EXPECT_GT(s, 0.0);
}

TEST(NormStatsTest, RoundTrip) {
  NormStats stats{{1.0, -2.0}, {0.5, 3.0}, {0.1, 0.2}};
  auto gen = at::make_generator<at::CPUGeneratorImpl>(5);
  const auto x = torch::randn({3, 2, 4, 8}, gen, torch::kFloat64) * 4.0;
  const auto back = denormalize(normalize(x, stats), stats);
  EXPECT_TRUE(torch::allclose(back, x, 1e-6, 1e-9));
  EXPECT_EQ(NormStats::from_json(stats.to_json()).stddev, stats.stddev);
}

TEST(Split, ChronologicalEightyTenTen) {
  const auto s = split_ranges(1000);
  EXPECT_EQ(s.train_begin, 0);
  EXPECT_EQ(s.train_end, 800);
  EXPECT_EQ(s.val_begin, 800);
  EXPECT_EQ(s.val_end, 900);
  EXPECT_EQ(s.test_begin, 900);
  EXPECT_EQ(s.test_end, 1000);
}

TEST(TrajectoryIo, RoundTripAcrossChunks) {
  const auto g = make_equiangular_grid(4, 8);
  const auto traj = simulate(g, DynamicsParams::desk_default(), 300);
  const auto dir = temp_dir("traj");
  TrajectoryManifest m;
  m.grid = g;
  m.params = DynamicsParams::desk_default();
  m.channel_names = traj.channel_names;
  m.stats = fit_norm_stats(traj);
  m.n_steps = 300;
  m.clock_period = 24;
  save_trajectory(dir, traj, m);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  const auto back = load_trajectory(dir);
  EXPECT_TRUE(torch::equal(back.states, traj.states));
  EXPECT_EQ(read_trajectory_manifest(dir).clock_period, 24);
  std::filesystem::remove_all(dir);
}
