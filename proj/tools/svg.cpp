#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace mcsformer::cli {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!(lo <= hi)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

}  // namespace

std::string render_svg(const Chart& chart) {
  const double left = 70, right = 20, top = 40, bottom = 55;
  const double w = chart.width - left - right;
  const double h = chart.height - top - bottom;

  Range xr, yr;
  for (const auto& s : chart.series) {
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  xr.finish();
  yr.finish();
  auto px = [&](double v) { return left + (v - xr.lo) / (xr.hi - xr.lo) * w; };
  auto py = [&](double v) { return top + (1.0 - (v - yr.lo) / (yr.hi - yr.lo)) * h; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(chart.width) +
         "\" height=\"" + std::to_string(chart.height) + "\" font-family=\"sans-serif\" " +
         "font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(chart.width / 2.0) + "\" y=\"22\" text-anchor=\"middle\" " +
         "font-size=\"15\">" + escape(chart.title) + "</text>\n";

  // Axes with five ticks each.
  svg += "<g stroke=\"#444\" fill=\"none\"><rect x=\"" + num(left) + "\" y=\"" + num(top) +
         "\" width=\"" + num(w) + "\" height=\"" + num(h) + "\"/></g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double yv = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    svg += "<line x1=\"" + num(px(xv)) + "\" y1=\"" + num(top + h) + "\" x2=\"" + num(px(xv)) +
           "\" y2=\"" + num(top + h + 5) + "\" stroke=\"#444\"/>\n";
    svg += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(top + h + 18) +
           "\" text-anchor=\"middle\">" + tick_label(xv) + "</text>\n";
    svg += "<line x1=\"" + num(left - 5) + "\" y1=\"" + num(py(yv)) + "\" x2=\"" + num(left) +
           "\" y2=\"" + num(py(yv)) + "\" stroke=\"#444\"/>\n";
    svg += "<text x=\"" + num(left - 8) + "\" y=\"" + num(py(yv) + 4) +
           "\" text-anchor=\"end\">" + tick_label(yv) + "</text>\n";
  }
  svg += "<text x=\"" + num(left + w / 2) + "\" y=\"" + num(chart.height - 12.0) +
         "\" text-anchor=\"middle\">" + escape(chart.x_label) + "</text>\n";
  svg += "<text transform=\"translate(16," + num(top + h / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">" + escape(chart.y_label) + "</text>\n";

  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const auto& s = chart.series[k];
    const std::size_t n = std::min(s.x.size(), s.y.size());
    if (s.points) {
      svg += "<g fill=\"" + s.color + "\">";
      for (std::size_t i = 0; i < n; ++i)
        if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
          svg += "<circle cx=\"" + num(px(s.x[i])) + "\" cy=\"" + num(py(s.y[i])) + "\" r=\"2.5\"/>";
      svg += "</g>\n";
    } else {
      svg += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.8\" points=\"";
      for (std::size_t i = 0; i < n; ++i)
        if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
          svg += num(px(s.x[i])) + "," + num(py(s.y[i])) + " ";
      svg += "\"/>\n";
    }
    const double ly = top + 14 + 16.0 * static_cast<double>(k);
    svg += "<rect x=\"" + num(left + w - 150) + "\" y=\"" + num(ly - 9) +
           "\" width=\"12\" height=\"10\" fill=\"" + s.color + "\"/>";
    svg += "<text x=\"" + num(left + w - 133) + "\" y=\"" + num(ly) + "\">" + escape(s.label) +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace mcsformer::cli
