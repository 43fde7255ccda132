#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "toycast/checkpoint.hpp"
#include "toycast/verification.hpp"

namespace toycast::report {

namespace fs = std::filesystem;

/// Every render_* call writes `path` (SVG) and a CSV sidecar next to it
/// (same stem, .csv). The CSV alone regenerates the SVG byte for byte
/// through regenerate_from_csv.

/// Variables x leads grid of signed percentages; blue below zero, red above,
/// hatched cells for missing values. Throws InvalidArgument on an empty table.
void render_scorecard(const RelativeSkillTable& table, const fs::path& path);

/// One line per variable of relative skill against lead.
void render_skill_vs_lead(const RelativeSkillTable& table, const fs::path& path);

struct CurveSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct TrainingCurves {
  std::vector<CurveSeries> runs;
  /// Drawn as a horizontal dashed line.
  std::optional<double> baseline;
  std::string baseline_label = "stage1 baseline";
  std::string y_label = "validation CRPS";
};

/// Validation-CRPS-vs-step series from a checkpoint history.
CurveSeries curve_from_history(const std::string& name, const std::vector<HistoryPoint>& history);

/// Returns false (and writes nothing) when there is no data point at all.
bool render_training_curves(const TrainingCurves& curves, const fs::path& path);

/// Log-log power against wavenumber, one line per record (wavenumber 0 omitted).
void render_spectra(const std::vector<SpectrumRecord>& records, const fs::path& path);

/// Re-renders the SVG described by a sidecar CSV.
void regenerate_from_csv(const fs::path& csv_path, const fs::path& svg_path);

/// Sidecar path for an image path.
fs::path sidecar(const fs::path& image_path);

RelativeSkillTable read_scorecard_csv(const fs::path& csv_path);

/// Cell color for a value given a symmetric bound, as "#rrggbb".
std::string diverging_color(double value, double bound);

}  // namespace toycast::report
