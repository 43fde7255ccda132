#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace toycast {

/// Placement of latitude rows on an equal-angle grid.
enum class RowLayout {
  /// n_lat equal bands tiling [-90, 90]; row centers at band midpoints, no pole row.
  cell_centered,
  /// Row centers at -90 + i * 180 / (n_lat - 1), poles included; the first and
  /// last rows are half-width polar caps.
  pole_centered,
};

/// Lat-lon raster, periodic in longitude. Angles are stored in degrees.
struct GridSpec {
  int64_t n_lat = 0;
  int64_t n_lon = 0;
  std::vector<double> lat_lower;
  std::vector<double> lat_upper;
  double lon_step = 0.0;

  /// Throws InvalidArgument when the rows do not tile [-90, 90] monotonically
  /// or the longitude step does not close the circle.
  void validate() const;

  std::vector<double> lat_centers() const;

  nlohmann::json to_json() const;
  static GridSpec from_json(const nlohmann::json& doc);

  bool operator==(const GridSpec&) const = default;
};

GridSpec make_equiangular_grid(int64_t n_lat, int64_t n_lon,
                               RowLayout layout = RowLayout::cell_centered);

/// Per-row latitude weights. `raw[h] = sin(upper) - sin(lower)`; `normalized`
/// divides by the mean of `raw` so it averages to one.
struct AreaWeights {
  std::vector<double> raw;
  std::vector<double> normalized;

  /// Normalized weights as an [H, 1] tensor, broadcastable against [..., H, W].
  torch::Tensor column(torch::ScalarType dtype = torch::kFloat32) const;
};

AreaWeights area_weights(const GridSpec& grid);

}  // namespace toycast
