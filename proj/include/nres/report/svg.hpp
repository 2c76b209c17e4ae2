#pragma once

#include <string>
#include <vector>

namespace nres::report {

struct Series {
  std::string label;
  std::vector<double> x, y;
  std::string color = "#1f77b4";
  bool dashed = false;
  bool markers = false;  // scatter points instead of a polyline
};

struct Panel {
  std::string title;
  std::string x_label, y_label;
  std::vector<Series> series;
  std::vector<double> vertical_lines;  // x positions, drawn dashed grey
  bool log_y = false;                  // non-positive values are skipped
  bool diagonal = false;               // y = x reference line
};

/// Panels laid out row-major in `columns` columns, each `width` x `height` px.
std::string render_svg(const std::vector<Panel>& panels, std::size_t columns = 1, double width = 480,
                       double height = 320);

/// Round tick values covering [lo, hi], about `target` of them.
std::vector<double> nice_ticks(double lo, double hi, std::size_t target = 5);

}  // namespace nres::report
