#pragma once

// Minimal SVG line charts: axes with ticks, polylines with markers, legend.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace topoattn {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
  bool dashed = false;
};

struct SvgChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  double y_min = 0.0;
  double y_max = 1.0;
  int width = 640;
  int height = 420;

  std::string render() const;
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
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

inline std::string fmt(double v, const char* spec = "%.4g") {
  char buf[32];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

/// About `count` evenly spaced "nice" tick values covering [lo, hi].
inline std::vector<double> nice_ticks(double lo, double hi, int count = 5) {
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / count;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step)
    ticks.push_back(std::abs(t) < 1e-12 ? 0.0 : t);
  return ticks;
}

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                           "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

}  // namespace detail

inline std::string SvgChart::render() const {
  using detail::fmt;
  const double left = 60, right = 170, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;

  double x_lo = 0, x_hi = 1;
  bool any = false;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      if (!any) x_lo = x_hi = x;
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      any = true;
    }
  if (x_hi == x_lo) {
    x_lo -= 1;
    x_hi += 1;
  }
  auto sx = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * pw; };
  auto sy = [&](double y) { return top + (1.0 - (y - y_min) / (y_max - y_min)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << detail::svg_escape(title) << "</text>\n";

  for (double t : detail::nice_ticks(y_min, y_max)) {
    os << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << fmt(sy(t))
       << "\" y2=\"" << fmt(sy(t)) << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << fmt(sy(t) + 4)
       << "\" text-anchor=\"end\">" << fmt(t) << "</text>\n";
  }
  for (double t : detail::nice_ticks(x_lo, x_hi)) {
    os << "<line x1=\"" << fmt(sx(t)) << "\" x2=\"" << fmt(sx(t)) << "\" y1=\"" << top + ph
       << "\" y2=\"" << top + ph + 5 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fmt(sx(t)) << "\" y=\"" << top + ph + 18
       << "\" text-anchor=\"middle\">" << fmt(t) << "</text>\n";
  }
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12
     << "\" text-anchor=\"middle\">" << detail::svg_escape(x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << top + ph / 2
     << ") rotate(-90)\" text-anchor=\"middle\">" << detail::svg_escape(y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = detail::kPalette[k % std::size(detail::kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\""
       << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"";
    for (std::size_t i = 0; i < s.points.size(); ++i)
      os << (i ? " " : "") << fmt(sx(s.points[i].first)) << ',' << fmt(sy(s.points[i].second));
    os << "\"/>\n";
    for (auto [x, y] : s.points)
      os << "<circle cx=\"" << fmt(sx(x)) << "\" cy=\"" << fmt(sy(y)) << "\" r=\"3\" fill=\""
         << color << "\"/>\n";
    const double ly = top + 10 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 36 << "\" y1=\"" << ly
       << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\""
       << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << "/>\n";
    os << "<text x=\"" << left + pw + 42 << "\" y=\"" << ly + 4 << "\">"
       << detail::svg_escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace topoattn
