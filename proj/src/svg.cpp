#include "auxtune/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace auxtune {

namespace {

constexpr double kWidth = 720, kHeight = 440;
constexpr double kLeft = 70, kRight = 696, kTop = 46, kBottom = 388;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
constexpr size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return std::string(buf);
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

}  // namespace

std::string render_line_chart(const std::string& title, const std::vector<ChartSeries>& series) {
  size_t total_points = 0;
  for (const auto& s : series) total_points += s.points.size();
  if (series.empty() || total_points == 0) throw std::invalid_argument("render_line_chart: nothing to plot");

  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
  bool first = true;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y))
        throw std::invalid_argument("render_line_chart: non-finite point in series '" + s.label + "'");
      x_min = first ? x : std::min(x_min, x);
      x_max = first ? x : std::max(x_max, x);
      y_min = first ? y : std::min(y_min, y);
      y_max = first ? y : std::max(y_max, y);
      first = false;
    }
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) {
    const double pad = std::max(1e-9, std::abs(y_min)) * 0.1 + 1e-6;
    y_min -= pad;
    y_max += pad;
  } else {
    const double pad = (y_max - y_min) * 0.06;
    y_min -= pad;
    y_max += pad;
  }

  const auto px = [&](double x) { return kLeft + (x - x_min) / (x_max - x_min) * (kRight - kLeft); };
  const auto py = [&](double y) { return kBottom - (y - y_min) / (y_max - y_min) * (kBottom - kTop); };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + fmt(kWidth) + "\" height=\"" +
         fmt(kHeight) + "\" viewBox=\"0 0 " + fmt(kWidth) + " " + fmt(kHeight) + "\">\n";
  out += "<rect width=\"" + fmt(kWidth) + "\" height=\"" + fmt(kHeight) + "\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" " +
         "text-anchor=\"middle\">" + escape(title) + "</text>\n";

  for (int i = 0; i <= 4; ++i) {
    const double ty = y_min + (y_max - y_min) * i / 4.0;
    out += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(py(ty)) + "\" x2=\"" + fmt(kRight) + "\" y2=\"" +
           fmt(py(ty)) + "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    out += "<text x=\"" + fmt(kLeft - 6) + "\" y=\"" + fmt(py(ty) + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" + fmt(ty) + "</text>\n";
    const double tx = x_min + (x_max - x_min) * i / 4.0;
    out += "<text x=\"" + fmt(px(tx)) + "\" y=\"" + fmt(kBottom + 18) +
           "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" + fmt(tx) + "</text>\n";
  }
  out += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kTop) + "\" x2=\"" + fmt(kLeft) + "\" y2=\"" + fmt(kBottom) +
         "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  out += "<line x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(kBottom) + "\" x2=\"" + fmt(kRight) + "\" y2=\"" +
         fmt(kBottom) + "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  out += "<text x=\"" + fmt((kLeft + kRight) / 2) + "\" y=\"" + fmt(kHeight - 14) +
         "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">step</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = kPalette[si % kPaletteSize];
    const auto& pts = series[si].points;
    if (pts.empty()) continue;
    std::string coords;
    for (const auto& [x, y] : pts) {
      if (!coords.empty()) coords += ' ';
      coords += fmt(px(x)) + "," + fmt(py(y));
    }
    out += "<polyline points=\"" + coords + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.8\"/>\n";
    for (const auto& [x, y] : pts)
      out += "<circle cx=\"" + fmt(px(x)) + "\" cy=\"" + fmt(py(y)) + "\" r=\"2.2\" fill=\"" + color + "\"/>\n";
  }

  const double lx = kRight - 190, ly = kTop + 8;
  for (size_t si = 0; si < series.size(); ++si) {
    const double row = ly + 18.0 * static_cast<double>(si);
    out += "<line x1=\"" + fmt(lx) + "\" y1=\"" + fmt(row) + "\" x2=\"" + fmt(lx + 24) + "\" y2=\"" + fmt(row) +
           "\" stroke=\"" + std::string(kPalette[si % kPaletteSize]) + "\" stroke-width=\"3\"/>\n";
    out += "<text x=\"" + fmt(lx + 30) + "\" y=\"" + fmt(row + 4) +
           "\" font-family=\"sans-serif\" font-size=\"12\">" + escape(series[si].label) + "</text>\n";
  }

  out += "</svg>\n";
  return out;
}

void write_line_chart(const std::string& path, const std::string& title, const std::vector<ChartSeries>& series) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << render_line_chart(title, series);
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace auxtune
