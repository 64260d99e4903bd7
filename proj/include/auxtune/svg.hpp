#pragma once

#include <string>
#include <utility>
#include <vector>

namespace auxtune {

struct ChartSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (step, value)
};

// SVG 1.1 line chart: one polyline per series, point markers, axes and legend
std::string render_line_chart(const std::string& title, const std::vector<ChartSeries>& series);
void write_line_chart(const std::string& path, const std::string& title, const std::vector<ChartSeries>& series);

}  // namespace auxtune
