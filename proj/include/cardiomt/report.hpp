#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cardiomt/training.hpp"

namespace cardiomt {

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
};

/// Standalone SVG document; points are drawn with markers and joined in
/// ascending x.
std::string render_svg(const LineChart& chart);

/// Every summary.json below `dir`, sorted by path.
std::vector<RunRecord> load_records(const std::filesystem::path& dir);

/// The evaluation at the record's best iteration.
const EvalEvent& best_eval(const RunRecord& record);

struct ReportFiles {
  std::vector<std::filesystem::path> plots;
  std::vector<std::filesystem::path> tables;
  /// Set when there were too few records to plot.
  std::string notice;
};

/// Writes sweep_summary.csv (one row per run), eval_series.csv (one row
/// per run and evaluation), accuracy_table.md and, with two or more runs,
/// the four SVG plots against alpha.
ReportFiles write_report(const std::vector<RunRecord>& records, const std::filesystem::path& out_dir);

}  // namespace cardiomt
