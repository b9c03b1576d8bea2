#pragma once

// Minimal standalone SVG line charts for CLI reports.

#include <string>
#include <vector>

namespace mcsformer::cli {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool points = false;  // draw markers instead of a polyline
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  int width = 720;
  int height = 420;
};

/// Renders the chart as a self-contained SVG document. Output depends only
/// on the chart contents (fixed number formatting), so identical inputs give
/// identical bytes.
std::string render_svg(const Chart& chart);

}  // namespace mcsformer::cli
