#include "rwmlab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "rwmlab/errors.hpp"

namespace rwmlab {

namespace {

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Extent {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void grow(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (lo > hi) {
      lo = 0.0;
      hi = 1.0;
    }
    if (lo == hi) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double m = 0.04 * (hi - lo);
    lo -= m;
    hi += m;
  }
};

const char* kPalette[] = {"#d4a017", "#6b6b6b", "#2c7fb8", "#d7301f",
                          "#31a354", "#756bb1", "#e377c2", "#17becf"};

void axes(std::string& s, double x0, double y0, double x1, double y1, const Extent& ex,
          const Extent& ey, const std::string& xl, const std::string& yl,
          const std::string& title) {
  s += "<rect x='" + num(x0) + "' y='" + num(y1) + "' width='" + num(x1 - x0) + "' height='" +
       num(y0 - y1) + "' fill='none' stroke='#333' stroke-width='1'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = ex.lo + (ex.hi - ex.lo) * i / 4.0;
    const double px = x0 + (x1 - x0) * i / 4.0;
    s += "<text x='" + num(px) + "' y='" + num(y0 + 18) +
         "' font-size='11' text-anchor='middle' fill='#333'>" + num(fx) + "</text>\n";
    const double fy = ey.lo + (ey.hi - ey.lo) * i / 4.0;
    const double py = y0 - (y0 - y1) * i / 4.0;
    s += "<text x='" + num(x0 - 6) + "' y='" + num(py + 4) +
         "' font-size='11' text-anchor='end' fill='#333'>" + num(fy) + "</text>\n";
    if (i > 0 && i < 4) {
      s += "<line x1='" + num(x0) + "' y1='" + num(py) + "' x2='" + num(x1) + "' y2='" + num(py) +
           "' stroke='#ddd' stroke-width='0.5'/>\n";
    }
  }
  s += "<text x='" + num((x0 + x1) / 2) + "' y='" + num(y0 + 34) +
       "' font-size='12' text-anchor='middle' fill='#111'>" + xl + "</text>\n";
  s += "<text x='14' y='" + num((y0 + y1) / 2) +
       "' font-size='12' text-anchor='middle' fill='#111' transform='rotate(-90 14 " +
       num((y0 + y1) / 2) + ")'>" + yl + "</text>\n";
  s += "<text x='" + num((x0 + x1) / 2) + "' y='16' font-size='13' text-anchor='middle' "
       "fill='#111'>" + title + "</text>\n";
}

}  // namespace

std::string palette_color(std::size_t index) { return kPalette[index % 8]; }

std::string render_line_chart(const SvgChart& chart) {
  if (chart.series.empty()) throw UsageError("render_line_chart: no series");
  Extent ex, ey;
  for (const auto& s : chart.series) {
    for (double v : s.x) ex.grow(v);
    for (double v : s.y) ey.grow(v);
    for (double v : s.band_lo) ey.grow(v);
    for (double v : s.band_hi) ey.grow(v);
  }
  ex.pad();
  ey.pad();
  const double x0 = 56, x1 = chart.width - 16;
  const double y0 = chart.height - 44, y1 = 28;
  auto px = [&](double v) { return x0 + (x1 - x0) * (v - ex.lo) / (ex.hi - ex.lo); };
  auto py = [&](double v) { return y0 - (y0 - y1) * (v - ey.lo) / (ey.hi - ey.lo); };

  std::string s = "<svg xmlns='http://www.w3.org/2000/svg' width='" +
                  std::to_string(chart.width) + "' height='" + std::to_string(chart.height) +
                  "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  axes(s, x0, y0, x1, y1, ex, ey, chart.x_label, chart.y_label, chart.title);

  for (const auto& ser : chart.series) {
    if (!ser.band_lo.empty() && ser.band_lo.size() == ser.x.size() &&
        ser.band_hi.size() == ser.x.size()) {
      std::string pts;
      for (std::size_t i = 0; i < ser.x.size(); ++i)
        pts += num(px(ser.x[i])) + "," + num(py(ser.band_hi[i])) + " ";
      for (std::size_t i = ser.x.size(); i-- > 0;)
        pts += num(px(ser.x[i])) + "," + num(py(ser.band_lo[i])) + " ";
      s += "<polygon points='" + pts + "' fill='" + ser.color + "' opacity='0.18' stroke='none'/>\n";
    }
  }
  for (const auto& ser : chart.series) {
    std::string pts;
    for (std::size_t i = 0; i < ser.x.size(); ++i)
      pts += num(px(ser.x[i])) + "," + num(py(ser.y[i])) + " ";
    s += "<polyline points='" + pts + "' fill='none' stroke='" + ser.color +
         "' stroke-width='1.6'" + (ser.dashed ? " stroke-dasharray='6 4'" : "") + "/>\n";
  }
  double ly = y1 + 8;
  for (const auto& ser : chart.series) {
    s += "<line x1='" + num(x1 - 120) + "' y1='" + num(ly) + "' x2='" + num(x1 - 96) + "' y2='" +
         num(ly) + "' stroke='" + ser.color + "' stroke-width='2'" +
         (ser.dashed ? " stroke-dasharray='6 4'" : "") + "/>\n";
    s += "<text x='" + num(x1 - 90) + "' y='" + num(ly + 4) + "' font-size='11' fill='#333'>" +
         ser.label + "</text>\n";
    ly += 16;
  }
  s += "</svg>\n";
  return s;
}

std::string render_heatmap(const SvgHeatmap& map) {
  if (map.cells.empty()) throw UsageError("render_heatmap: no cells");
  const std::size_t rows = map.cells.size(), cols = map.cells[0].size();
  Extent ev;
  for (const auto& row : map.cells)
    for (double v : row) ev.grow(v);
  if (ev.lo > ev.hi) {
    ev.lo = 0.0;
    ev.hi = 1.0;
  }
  if (ev.lo == ev.hi) ev.hi = ev.lo + 1.0;

  const double x0 = 70, x1 = map.width - 70;
  const double y0 = map.height - 52, y1 = 34;
  const double cw = (x1 - x0) / cols, ch = (y0 - y1) / rows;

  std::string s = "<svg xmlns='http://www.w3.org/2000/svg' width='" + std::to_string(map.width) +
                  "' height='" + std::to_string(map.height) +
                  "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  s += "<text x='" + num((x0 + x1) / 2) +
       "' y='18' font-size='13' text-anchor='middle' fill='#111'>" + map.title + "</text>\n";

  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = map.cells[r][c];
      std::string fill = "#bbbbbb";
      if (std::isfinite(v)) {
        // Darker means higher.
        const double t = (v - ev.lo) / (ev.hi - ev.lo);
        const int g = static_cast<int>(std::lround(235.0 - 185.0 * t));
        char buf[16];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", g, g, std::min(255, g + 12));
        fill = buf;
      }
      const double cx = x0 + c * cw, cy = y1 + r * ch;
      s += "<rect x='" + num(cx) + "' y='" + num(cy) + "' width='" + num(cw) + "' height='" +
           num(ch) + "' fill='" + fill + "' stroke='#fff' stroke-width='1'/>\n";
      if (std::isfinite(v)) {
        s += "<text x='" + num(cx + cw / 2) + "' y='" + num(cy + ch / 2 + 4) +
             "' font-size='11' text-anchor='middle' fill='#222'>" + num(v) + "</text>\n";
      }
    }
  }
  for (std::size_t c = 0; c < cols && c < map.x_ticks.size(); ++c)
    s += "<text x='" + num(x0 + c * cw + cw / 2) + "' y='" + num(y0 + 16) +
         "' font-size='11' text-anchor='middle' fill='#333'>" + map.x_ticks[c] + "</text>\n";
  for (std::size_t r = 0; r < rows && r < map.y_ticks.size(); ++r)
    s += "<text x='" + num(x0 - 8) + "' y='" + num(y1 + r * ch + ch / 2 + 4) +
         "' font-size='11' text-anchor='end' fill='#333'>" + map.y_ticks[r] + "</text>\n";
  s += "<text x='" + num((x0 + x1) / 2) + "' y='" + num(y0 + 36) +
       "' font-size='12' text-anchor='middle' fill='#111'>" + map.x_label + "</text>\n";
  s += "<text x='16' y='" + num((y0 + y1) / 2) +
       "' font-size='12' text-anchor='middle' fill='#111' transform='rotate(-90 16 " +
       num((y0 + y1) / 2) + ")'>" + map.y_label + "</text>\n";
  s += "</svg>\n";
  return s;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path);
  os << content;
}

}  // namespace rwmlab
