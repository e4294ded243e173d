#pragma once

// Bare-bones static SVG charts: scatter panels and bar charts with error
// bars. Enough to eyeball sweep, replicate and ablation results.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "clmr/evaluation.hpp"

namespace clmr::svg {

struct Point {
  double x;
  double y;
};

struct ScatterPanel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Point> points;
  bool connect = false;  // draw a polyline through the points in order
};

struct Bar {
  std::string label;
  double value;
  double error = 0.0;  // half-height of the error bar
};

struct BarPanel {
  std::string title;
  std::string y_label;
  std::vector<Bar> bars;
};

namespace detail {

inline constexpr double kPanelW = 320, kPanelH = 260, kLeft = 60, kRight = 15, kTop = 30,
                        kBottom = 45;

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Range {
  double lo, hi;
  double map(double v, double a, double b) const {
    return hi == lo ? (a + b) / 2 : a + (v - lo) / (hi - lo) * (b - a);
  }
};

inline Range padded(double lo, double hi) {
  if (lo == hi) return {lo - 1, hi + 1};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

inline std::string axes(double ox, const std::string& title, const std::string& xl,
                        const std::string& yl, Range xr, Range yr, bool x_ticks) {
  const double x0 = ox + kLeft, x1 = ox + kPanelW - kRight, y0 = kPanelH - kBottom, y1 = kTop;
  std::string s;
  s += "<text x=\"" + num(ox + kPanelW / 2) + "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" +
       html_escape(title) + "</text>\n";
  s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y0) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(y1) +
       "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = yr.lo + (yr.hi - yr.lo) * k / 4.0;
    const double y = yr.map(yv, y0, y1);
    s += "<text x=\"" + num(x0 - 4) + "\" y=\"" + num(y + 4) +
         "\" text-anchor=\"end\" font-size=\"10\">" + num(yv) + "</text>\n";
    if (x_ticks) {
      const double xv = xr.lo + (xr.hi - xr.lo) * k / 4.0;
      const double x = xr.map(xv, x0, x1);
      s += "<text x=\"" + num(x) + "\" y=\"" + num(y0 + 14) +
           "\" text-anchor=\"middle\" font-size=\"10\">" + num(xv) + "</text>\n";
    }
  }
  s += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(kPanelH - 8) +
       "\" text-anchor=\"middle\" font-size=\"11\">" + html_escape(xl) + "</text>\n";
  s += "<text x=\"" + num(ox + 14) + "\" y=\"" + num((y0 + y1) / 2) +
       "\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 " + num(ox + 14) + " " +
       num((y0 + y1) / 2) + ")\">" + html_escape(yl) + "</text>\n";
  return s;
}

inline std::string open(std::size_t panels) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         num(kPanelW * static_cast<double>(std::max<std::size_t>(panels, 1))) + "\" height=\"" +
         num(kPanelH) + "\" font-family=\"sans-serif\">\n";
}

}  // namespace detail

inline std::string scatter(const std::vector<ScatterPanel>& panels) {
  using namespace detail;
  std::string s = open(panels.size());
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    const double ox = kPanelW * static_cast<double>(p);
    double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
    for (const auto& pt : panel.points) {
      xlo = std::min(xlo, pt.x), xhi = std::max(xhi, pt.x);
      ylo = std::min(ylo, pt.y), yhi = std::max(yhi, pt.y);
    }
    if (panel.points.empty()) xlo = ylo = 0, xhi = yhi = 1;
    const Range xr = padded(xlo, xhi), yr = padded(ylo, yhi);
    s += axes(ox, panel.title, panel.x_label, panel.y_label, xr, yr, true);
    const double x0 = ox + kLeft, x1 = ox + kPanelW - kRight, y0 = kPanelH - kBottom, y1 = kTop;
    if (panel.connect && panel.points.size() > 1) {
      s += "<polyline fill=\"none\" stroke=\"#4878cf\" points=\"";
      for (const auto& pt : panel.points)
        s += num(xr.map(pt.x, x0, x1)) + "," + num(yr.map(pt.y, y0, y1)) + " ";
      s += "\"/>\n";
    }
    for (const auto& pt : panel.points) {
      s += "<circle cx=\"" + num(xr.map(pt.x, x0, x1)) + "\" cy=\"" + num(yr.map(pt.y, y0, y1)) +
           "\" r=\"3\" fill=\"#4878cf\"/>\n";
    }
  }
  return s + "</svg>\n";
}

inline std::string bars(const BarPanel& panel) {
  using namespace detail;
  std::string s = open(1);
  double lo = 0.0, hi = 0.0;
  for (const auto& b : panel.bars) {
    lo = std::min(lo, b.value - b.error);
    hi = std::max(hi, b.value + b.error);
  }
  const Range yr{lo, hi == lo ? lo + 1 : hi * 1.05};
  s += axes(0, panel.title, "", panel.y_label, yr, yr, false);
  const double x0 = kLeft, x1 = kPanelW - kRight, y0 = kPanelH - kBottom, y1 = kTop;
  const double slot = (x1 - x0) / static_cast<double>(std::max<std::size_t>(panel.bars.size(), 1));
  for (std::size_t i = 0; i < panel.bars.size(); ++i) {
    const auto& b = panel.bars[i];
    const double cx = x0 + slot * (static_cast<double>(i) + 0.5);
    const double top = yr.map(b.value, y0, y1), base = yr.map(0.0, y0, y1);
    s += "<rect x=\"" + num(cx - slot * 0.35) + "\" y=\"" + num(std::min(top, base)) +
         "\" width=\"" + num(slot * 0.7) + "\" height=\"" + num(std::fabs(base - top)) +
         "\" fill=\"#9bb7e0\"/>\n";
    if (b.error > 0) {
      const double ea = yr.map(b.value - b.error, y0, y1), eb = yr.map(b.value + b.error, y0, y1);
      s += "<line x1=\"" + num(cx) + "\" y1=\"" + num(ea) + "\" x2=\"" + num(cx) + "\" y2=\"" +
           num(eb) + "\" stroke=\"black\"/>\n";
    }
    s += "<text x=\"" + num(cx) + "\" y=\"" + num(y0 + 14) +
         "\" text-anchor=\"middle\" font-size=\"10\">" + html_escape(b.label) + "</text>\n";
  }
  return s + "</svg>\n";
}

}  // namespace clmr::svg
