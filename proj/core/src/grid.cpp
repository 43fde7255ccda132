#include "toycast/grid.hpp"

#include <cmath>
#include <numbers>

#include "toycast/error.hpp"

namespace toycast {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kAngleTol = 1e-9;

}  // namespace

GridSpec make_equiangular_grid(int64_t n_lat, int64_t n_lon, RowLayout layout) {
  if (n_lat < 1) throw InvalidArgument("n_lat must be >= 1, got " + std::to_string(n_lat));
  if (n_lon < 2) throw InvalidArgument("n_lon must be >= 2, got " + std::to_string(n_lon));
  if (layout == RowLayout::pole_centered && n_lat < 2) {
    throw InvalidArgument("pole-centered grids need at least two rows");
  }

  GridSpec g;
  g.n_lat = n_lat;
  g.n_lon = n_lon;
  g.lon_step = 360.0 / static_cast<double>(n_lon);
  g.lat_lower.resize(n_lat);
  g.lat_upper.resize(n_lat);

  if (layout == RowLayout::cell_centered) {
    const double step = 180.0 / static_cast<double>(n_lat);
    for (int64_t h = 0; h < n_lat; ++h) {
      g.lat_lower[h] = -90.0 + step * static_cast<double>(h);
      g.lat_upper[h] = -90.0 + step * static_cast<double>(h + 1);
    }
    g.lat_upper[n_lat - 1] = 90.0;
  } else {
    const double step = 180.0 / static_cast<double>(n_lat - 1);
    for (int64_t h = 0; h < n_lat; ++h) {
      const double center = -90.0 + step * static_cast<double>(h);
      g.lat_lower[h] = std::max(-90.0, center - 0.5 * step);
      g.lat_upper[h] = std::min(90.0, center + 0.5 * step);
    }
  }
  return g;
}

void GridSpec::validate() const {
  if (n_lat < 1 || n_lon < 2) throw InvalidArgument("grid dimensions must be positive (n_lon >= 2)");
  if (static_cast<int64_t>(lat_lower.size()) != n_lat ||
      static_cast<int64_t>(lat_upper.size()) != n_lat) {
    throw InvalidArgument("latitude bound arrays must have n_lat entries");
  }
  if (std::abs(lon_step * static_cast<double>(n_lon) - 360.0) > kAngleTol) {
    throw InvalidArgument("n_lon * lon_step must equal 360 degrees");
  }
  if (std::abs(lat_lower.front() + 90.0) > kAngleTol || std::abs(lat_upper.back() - 90.0) > kAngleTol) {
    throw InvalidArgument("latitude rows must span [-90, 90]");
  }
  for (int64_t h = 0; h < n_lat; ++h) {
    if (!(lat_lower[h] < lat_upper[h])) {
      throw InvalidArgument("row " + std::to_string(h) + " has lower bound >= upper bound");
    }
    if (h > 0 && std::abs(lat_lower[h] - lat_upper[h - 1]) > kAngleTol) {
      throw InvalidArgument("rows " + std::to_string(h - 1) + " and " + std::to_string(h) +
                            " overlap or leave a gap");
    }
  }
}

std::vector<double> GridSpec::lat_centers() const {
  std::vector<double> c(n_lat);
  for (int64_t h = 0; h < n_lat; ++h) c[h] = 0.5 * (lat_lower[h] + lat_upper[h]);
  return c;
}

nlohmann::json GridSpec::to_json() const {
  return {{"n_lat", n_lat}, {"n_lon", n_lon}, {"lat_lower", lat_lower},
          {"lat_upper", lat_upper}, {"lon_step", lon_step}};
}

GridSpec GridSpec::from_json(const nlohmann::json& doc) {
  GridSpec g;
  g.n_lat = doc.at("n_lat").get<int64_t>();
  g.n_lon = doc.at("n_lon").get<int64_t>();
  g.lat_lower = doc.at("lat_lower").get<std::vector<double>>();
  g.lat_upper = doc.at("lat_upper").get<std::vector<double>>();
  g.lon_step = doc.at("lon_step").get<double>();
  g.validate();
  return g;
}

AreaWeights area_weights(const GridSpec& grid) {
  grid.validate();
  AreaWeights w;
  w.raw.resize(grid.n_lat);
  double sum = 0.0;
  for (int64_t h = 0; h < grid.n_lat; ++h) {
    w.raw[h] = std::sin(grid.lat_upper[h] * kDegToRad) - std::sin(grid.lat_lower[h] * kDegToRad);
    sum += w.raw[h];
  }
  const double mean = sum / static_cast<double>(grid.n_lat);
  w.normalized.resize(grid.n_lat);
  for (int64_t h = 0; h < grid.n_lat; ++h) w.normalized[h] = w.raw[h] / mean;
  return w;
}

torch::Tensor AreaWeights::column(torch::ScalarType dtype) const {
  auto t = torch::tensor(normalized, torch::TensorOptions().dtype(torch::kFloat64));
  return t.to(dtype).unsqueeze(1);
}

}  // namespace toycast
