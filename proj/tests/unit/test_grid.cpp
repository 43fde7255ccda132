#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "toycast/error.hpp"
#include "toycast/grid.hpp"

using namespace toycast;

TEST(Grid, SingleRowCoversSphere) {
  const auto g = make_equiangular_grid(1, 4);
  ASSERT_EQ(g.lat_lower.size(), 1u);
  EXPECT_DOUBLE_EQ(g.lat_lower[0], -90.0);
  EXPECT_DOUBLE_EQ(g.lat_upper[0], 90.0);
  EXPECT_DOUBLE_EQ(g.lon_step, 90.0);
}

TEST(Grid, FullResolution) {
  const auto g = make_equiangular_grid(121, 240);
  EXPECT_DOUBLE_EQ(g.lon_step, 1.5);
  EXPECT_NEAR(g.lat_upper[0] - g.lat_lower[0], 180.0 / 121.0, 1e-12);
  g.validate();
}

TEST(Grid, ThreeDegreeRowBounds) {
  const auto g = make_equiangular_grid(61, 120);
  EXPECT_NEAR(g.lat_lower[0], -90.0, 1e-12);
  EXPECT_NEAR(g.lat_upper[0], -90.0 + 180.0 / 61.0, 1e-12);
  EXPECT_DOUBLE_EQ(g.lon_step, 3.0);
}

TEST(Grid, RowsTileMonotonically) {
  const auto g = make_equiangular_grid(30, 64);
  for (int64_t h = 0; h < g.n_lat; ++h) {
    EXPECT_LT(g.lat_lower[h], g.lat_upper[h]);
    if (h > 0) EXPECT_DOUBLE_EQ(g.lat_lower[h], g.lat_upper[h - 1]);
  }
  EXPECT_DOUBLE_EQ(g.lat_lower.front(), -90.0);
  EXPECT_DOUBLE_EQ(g.lat_upper.back(), 90.0);
}

TEST(Grid, PoleCenteredLayoutHasHalfCaps) {
  const auto g = make_equiangular_grid(5, 8, RowLayout::pole_centered);
  const auto centers = g.lat_centers();
  EXPECT_DOUBLE_EQ(g.lat_lower[0], -90.0);
  EXPECT_NEAR(g.lat_upper[0] - g.lat_lower[0], 22.5, 1e-12);
  EXPECT_NEAR(g.lat_upper[1] - g.lat_lower[1], 45.0, 1e-12);
  g.validate();
}

TEST(Grid, InvalidDimensionsThrow) {
  EXPECT_THROW(make_equiangular_grid(0, 4), InvalidArgument);
  EXPECT_THROW(make_equiangular_grid(4, 1), InvalidArgument);
  EXPECT_THROW(make_equiangular_grid(-3, 8), InvalidArgument);
}

TEST(Grid, ValidateRejectsBrokenTiling) {
  auto g = make_equiangular_grid(4, 8);
  g.lat_upper[1] += 1.0;
  EXPECT_THROW(g.validate(), InvalidArgument);
  auto g2 = make_equiangular_grid(4, 8);
  g2.lon_step = 40.0;
  EXPECT_THROW(g2.validate(), InvalidArgument);
}

TEST(Grid, JsonRoundTrip) {
  const auto g = make_equiangular_grid(7, 12);
  const auto back = GridSpec::from_json(g.to_json());
  EXPECT_EQ(g, back);
  for (const char* key : {"n_lat", "n_lon", "lat_lower", "lat_upper", "lon_step"}) EXPECT_TRUE(g.to_json().contains(key));
}

TEST(AreaWeights, SingleBand) {
  const auto w = area_weights(make_equiangular_grid(1, 4));
  ASSERT_EQ(w.raw.size(), 1u);
  EXPECT_NEAR(w.raw[0], 2.0, 1e-15);
  EXPECT_NEAR(w.normalized[0], 1.0, 1e-15);
}

TEST(AreaWeights, TwoEqualBands) {
  const auto w = area_weights(make_equiangular_grid(2, 4));
  EXPECT_NEAR(w.raw[0], 1.0, 1e-15);
  EXPECT_NEAR(w.raw[1], 1.0, 1e-15);
  EXPECT_NEAR(w.normalized[0], 1.0, 1e-15);
  EXPECT_NEAR(w.normalized[1], 1.0, 1e-15);
}

TEST(AreaWeights, MatchesQuadratureOracle) {
  const auto g = make_equiangular_grid(61, 120);
  const auto w = area_weights(g);
  const auto ref = oracle::quadrature_area_weights(g.lat_lower, g.lat_upper);
  double max_diff = 0.0;
  for (std::size_t h = 0; h < ref.size(); ++h) max_diff = std::max(max_diff, std::abs(w.normalized[h] - ref[h]));
  EXPECT_LT(max_diff, 1e-9);
}

TEST(AreaWeights, RawSumsToTwoAndNormalizedMeanIsOne) {
  for (int64_t n : {1, 2, 7, 30, 61, 121}) {
    const auto w = area_weights(make_equiangular_grid(n, 8));
    double sum = 0.0, mean = 0.0;
    for (double v : w.raw) sum += v;
    for (double v : w.normalized) {
      mean += v;
      EXPECT_GT(v, 0.0);
    }
    mean /= static_cast<double>(n);
    EXPECT_NEAR(sum, 2.0, 1e-12);
    EXPECT_NEAR(mean, 1.0, 1e-12);
  }
}

TEST(AreaWeights, RawIsSineDifference) {
  const auto g = make_equiangular_grid(9, 8);
  const auto w = area_weights(g);
  const double r = std::numbers::pi / 180.0;
  for (int64_t h = 0; h < g.n_lat; ++h) {
    EXPECT_NEAR(w.raw[h], std::sin(g.lat_upper[h] * r) - std::sin(g.lat_lower[h] * r), 1e-15);
  }
}

TEST(AreaWeights, ReversalSymmetry) {
  const auto w = area_weights(make_equiangular_grid(11, 8));
  for (std::size_t h = 0; h < w.normalized.size(); ++h) {
    EXPECT_NEAR(w.normalized[h], w.normalized[w.normalized.size() - 1 - h], 1e-14);
  }
}

TEST(AreaWeights, ApproachesCosineOnFineGrids) {
  const auto g = make_equiangular_grid(721, 16);
  const auto w = area_weights(g);
  const auto c = g.lat_centers();
  double lo = 1e300, hi = -1e300;
  for (int64_t h = 1; h + 1 < g.n_lat; ++h) {
    const double ratio = w.normalized[h] / std::cos(c[h] * std::numbers::pi / 180.0);
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  EXPECT_LT((hi - lo) / lo, 1e-3);
}

TEST(AreaWeights, ColumnTensorShape) {
  const auto w = area_weights(make_equiangular_grid(6, 8));
  const auto col = w.column(torch::kFloat64);
  EXPECT_EQ(col.sizes(), (std::vector<int64_t>{6, 1}));
  EXPECT_NEAR(col.mean().item<double>(), 1.0, 1e-14);
}
