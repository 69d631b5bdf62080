#include "unetseg/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "unetseg/error.hpp"

namespace unetseg {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string render_line_chart(const std::vector<Series>& series, const ChartOptions& options) {
  const double left = 70, right = 20, top = 40, bottom = 50;
  const double pw = options.width - left - right, ph = options.height - top - bottom;
  auto usable = [&](const std::pair<double, double>& p) {
    return std::isfinite(p.first) && std::isfinite(p.second) && (!options.log_x || p.first > 0.0);
  };
  auto tx = [&](double x) { return options.log_x ? std::log10(x) : x; };

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      if (!usable(p)) continue;
      x0 = std::min(x0, tx(p.first));
      x1 = std::max(x1, tx(p.first));
      y0 = std::min(y0, p.second);
      y1 = std::max(y1, p.second);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto sx = [&](double x) { return left + (tx(x) - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(options.width) + "\" height=\"" +
         std::to_string(options.height) + "\" viewBox=\"0 0 " + std::to_string(options.width) + " " +
         std::to_string(options.height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + coord(options.width / 2.0) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
         escape(options.title) + "</text>\n";
  svg += "<g stroke=\"#444\" fill=\"none\"><rect x=\"" + coord(left) + "\" y=\"" + coord(top) + "\" width=\"" +
         coord(pw) + "\" height=\"" + coord(ph) + "\"/></g>\n";

  svg += "<g fill=\"#333\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0;
    const double label = options.log_x ? std::pow(10.0, fx) : fx;
    const double px = left + pw * i / 4.0;
    svg += "<text x=\"" + coord(px) + "\" y=\"" + coord(top + ph + 16) + "\" text-anchor=\"middle\">" +
           number(label) + "</text>\n";
    const double fy = y0 + (y1 - y0) * i / 4.0;
    svg += "<text x=\"" + coord(left - 6) + "\" y=\"" + coord(sy(fy) + 4) + "\" text-anchor=\"end\">" + number(fy) +
           "</text>\n";
  }
  svg += "<text x=\"" + coord(left + pw / 2) + "\" y=\"" + coord(options.height - 10.0) +
         "\" text-anchor=\"middle\">" + escape(options.x_label) + "</text>\n";
  svg += "<text x=\"16\" y=\"" + coord(top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         coord(top + ph / 2) + ")\">" + escape(options.y_label) + "</text>\n";
  svg += "</g>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    std::string points;
    for (const auto& p : series[i].points) {
      if (!usable(p)) continue;
      if (!points.empty()) points += ' ';
      points += coord(sx(p.first)) + "," + coord(sy(p.second));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + points +
           "\"><title>" + escape(series[i].name) + "</title></polyline>\n";
    const double ly = top + 14 + 14.0 * static_cast<double>(i);
    svg += "<text x=\"" + coord(left + pw - 8) + "\" y=\"" + coord(ly) + "\" text-anchor=\"end\" fill=\"" + color +
           "\">" + escape(series[i].name) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

void write_line_chart(const std::vector<Series>& series, const ChartOptions& options,
                      const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << render_line_chart(series, options);
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace unetseg
