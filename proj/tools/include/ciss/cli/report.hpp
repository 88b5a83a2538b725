#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ciss/cli/csv.hpp"

namespace ciss::cli {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Static line chart, one polyline per series. Output depends only on the
// inputs.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label,
                           const std::vector<Series>& series);

// Per-class IoU series ("class <id>") from metrics.csv plus the aggregate
// series from metrics_summary.csv when given.
std::vector<Series> miou_series(const CsvTable& metrics,
                                const CsvTable* summary);

// dz, dz_plus, dz_minus against iterations accumulated over steps.
std::vector<Series> drift_series(const CsvTable& drift);

// Writes miou_over_steps.svg and, when drift.csv has rows, drift.svg into
// `run_dir`. Returns the files written. Missing metrics.csv is a
// ConfigError.
std::vector<std::filesystem::path> plot_run(const std::filesystem::path& run_dir);

// Markdown table of final-step metrics, one row per run group with
// mean +- sample std over its runs. Runs must share scenario and setting.
std::string compare_runs(const std::vector<std::filesystem::path>& run_dirs);

}  // namespace ciss::cli
