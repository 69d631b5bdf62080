#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace unetseg {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

struct ChartOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  int width = 640;
  int height = 400;
};

/// Standalone SVG document with axes, ticks, a legend and one polyline per
/// series. Non-finite points (and non-positive x on a log axis) are skipped.
std::string render_line_chart(const std::vector<Series>& series, const ChartOptions& options);

void write_line_chart(const std::vector<Series>& series, const ChartOptions& options,
                      const std::filesystem::path& path);

}  // namespace unetseg
