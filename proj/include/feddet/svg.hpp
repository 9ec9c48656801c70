#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace feddet {

struct ChartSeries {
  std::string name;
  std::string color;  // any SVG color string
  std::vector<std::pair<double, double>> points;
};

// Static line chart: axes, ticks, a legend, and exactly one <polyline>
// element per series (axes are drawn with <line> so the polyline count
// matches the series count).
void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<ChartSeries>& series);

}  // namespace feddet
