#pragma once

#include <optional>
#include <string>
#include <vector>

namespace conformal_triage {

struct ChartSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool step = false;  // right-continuous step instead of straight segments
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_min = 0.0, x_max = 1.0;
  double y_min = 0.0, y_max = 1.0;
  bool diagonal = false;                 // y = x reference
  std::optional<double> vertical_marker; // dashed line at this x
  std::vector<ChartSeries> series;
};

/// Self-contained SVG document for a line or step chart.
std::string render_chart(const ChartSpec& spec);

}  // namespace conformal_triage
