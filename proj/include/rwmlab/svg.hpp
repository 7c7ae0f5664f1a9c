#pragma once

#include <string>
#include <vector>

namespace rwmlab {

// Deterministic static SVG emission: line charts with optional min/max band
// shading per series group, and heatmaps. Identical inputs produce identical
// bytes.
struct SvgSeries {
  std::string label;
  std::string color;                // "#rrggbb"
  std::vector<double> x, y;         // polyline
  std::vector<double> band_lo, band_hi;  // optional shading, same x
  bool dashed = false;
};

struct SvgChart {
  std::string title, x_label, y_label;
  std::vector<SvgSeries> series;
  int width = 640, height = 420;
};

std::string render_line_chart(const SvgChart& chart);

struct SvgHeatmap {
  std::string title, x_label, y_label;
  std::vector<std::string> x_ticks, y_ticks;
  std::vector<std::vector<double>> cells;  // rows x cols; NaN cells drawn grey
  int width = 560, height = 420;
};

std::string render_heatmap(const SvgHeatmap& map);

void write_text_file(const std::string& path, const std::string& content);

// Stable palette for variant/noise keyed series.
std::string palette_color(std::size_t index);

}  // namespace rwmlab
