#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "toycast/grid.hpp"
#include "toycast/rollout.hpp"
#include "toycast/toyatmos.hpp"

namespace toycast {

/// Scores for one (variable, lead) cell averaged over init times.
/// Fields an operation does not compute stay 0.
struct MetricRecord {
  std::string variable;
  int64_t lead = 0;
  double crps = 0.0;
  double rmse = 0.0;
  double spread = 0.0;
  double ssr = 0.0;  // +inf when rmse == 0 < spread, NaN when both are 0
  int64_t n_members = 0;
  int64_t n_inits = 0;
};

/// Per-lead fair CRPS of one archive against truth states (one per lead, same
/// units as the archive).
std::vector<MetricRecord> eval_crps(const EnsembleForecast& forecast, const std::vector<StateTensor>& truth,
                                    const AreaWeights& weights);

/// Ensemble-mean RMSE, spread (unbiased ensemble variance, divisor M - 1)
/// and SSR = sqrt((M + 1) / M) * spread / rmse. Spatial sums use the
/// area-weighted mean.
std::vector<MetricRecord> eval_rmse_spread_ssr(const EnsembleForecast& forecast,
                                               const std::vector<StateTensor>& truth, const AreaWeights& weights);

/// All metrics over several init times. CRPS is averaged over inits; RMSE
/// and spread average their squares before the square root.
std::vector<MetricRecord> evaluate(const std::vector<EnsembleForecast>& forecasts,
                                   const std::vector<std::vector<StateTensor>>& truths, const AreaWeights& weights);

/// Latitude band in degrees; rows whose centers fall inside are used.
struct LatBand {
  double lower = -90.0;
  double upper = 90.0;
};
/// Central half of the rows.
LatBand default_band(const GridSpec& grid);

struct SpectrumRecord {
  std::string variable;
  int64_t lead = 0;
  std::vector<int64_t> wavenumbers;  // 0..W/2
  std::vector<double> power;
  LatBand band;
  /// Band- and sample-averaged mean square of the field; equals the sum of `power`.
  double mean_square = 0.0;
};

/// One-sided zonal power spectrum averaged over rows in the band and over
/// samples. `states` is [N, C, H, W] or [C, H, W]. Power is normalized so that
/// sum_k P_k equals the row mean square.
std::vector<SpectrumRecord> zonal_spectrum(const torch::Tensor& states, const GridSpec& grid, const LatBand& band,
                                           int64_t lead = 0, const std::vector<std::string>& channel_names = {});

/// 100 * (model - reference) / reference.
double relative_change(double model, double reference);

enum class SkillMetric { crps, rmse };

struct RelativeSkillTable {
  std::string metric = "crps";
  std::vector<std::string> variables;
  std::vector<int64_t> leads;
  std::vector<std::vector<double>> cells;  // [variable][lead], percent
  double aggregate = 0.0;                  // mean over cells
};

RelativeSkillTable relative_skill(const std::vector<MetricRecord>& model, const std::vector<MetricRecord>& reference,
                                  SkillMetric metric = SkillMetric::crps);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records);
std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path);
nlohmann::json metrics_to_json(const std::vector<MetricRecord>& records);
void write_spectrum_csv(const std::filesystem::path& path, const SpectrumRecord& record);

}  // namespace toycast
