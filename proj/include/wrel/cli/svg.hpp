#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "wrel/common.hpp"

namespace wrel::cli {

/// Minimal static SVG charts for --plot.
struct Series {
  std::string label;
  std::vector<double> values;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  return colors[i % 6];
}

inline void save(const std::filesystem::path& path, const std::string& body, int w, int h) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << body << "</svg>\n";
}

}  // namespace detail

inline void line_chart(const std::filesystem::path& path, const std::string& title, const std::vector<Series>& series) {
  const int w = 640, h = 360, left = 60, right = 20, top = 40, bottom = 40;
  double lo = 0, hi = 0;
  std::size_t n = 0;
  bool first = true;
  for (const auto& s : series)
    for (double v : s.values) {
      lo = first ? v : std::min(lo, v);
      hi = first ? v : std::max(hi, v);
      first = false;
    }
  for (const auto& s : series) n = std::max(n, s.values.size());
  if (hi <= lo) hi = lo + 1;
  const auto x = [&](std::size_t i) { return left + (n > 1 ? (w - left - right) * double(i) / double(n - 1) : 0.0); };
  const auto y = [&](double v) { return top + (h - top - bottom) * (hi - v) / (hi - lo); };
  std::string body = "<text x=\"" + std::to_string(left) + "\" y=\"24\" font-size=\"14\">" + title + "</text>\n";
  body += "<text x=\"4\" y=\"" + detail::num(y(hi) + 4) + "\" font-size=\"10\">" + detail::num(hi) + "</text>\n";
  body += "<text x=\"4\" y=\"" + detail::num(y(lo)) + "\" font-size=\"10\">" + detail::num(lo) + "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    std::string pts;
    for (std::size_t i = 0; i < series[k].values.size(); ++i)
      pts += detail::num(x(i)) + "," + detail::num(y(series[k].values[i])) + " ";
    body += "<polyline fill=\"none\" stroke=\"" + std::string(detail::palette(k)) + "\" points=\"" + pts + "\"/>\n";
    body += "<text x=\"" + std::to_string(w - 160) + "\" y=\"" + std::to_string(top + 14 * int(k)) +
            "\" font-size=\"11\" fill=\"" + detail::palette(k) + "\">" + series[k].label + "</text>\n";
  }
  detail::save(path, body, w, h);
}

inline void bar_chart(const std::filesystem::path& path, const std::string& title,
                      const std::vector<std::string>& labels, const std::vector<double>& values) {
  const int w = 640, h = 360, left = 40, top = 40, bottom = 40;
  const double hi = std::max(1.0, values.empty() ? 1.0 : *std::max_element(values.begin(), values.end()));
  const double slot = double(w - 2 * left) / double(std::max<std::size_t>(1, values.size()));
  std::string body = "<text x=\"" + std::to_string(left) + "\" y=\"24\" font-size=\"14\">" + title + "</text>\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double bh = (h - top - bottom) * values[i] / hi, bx = left + slot * double(i) + slot * 0.15;
    body += "<rect x=\"" + detail::num(bx) + "\" y=\"" + detail::num(h - bottom - bh) + "\" width=\"" +
            detail::num(slot * 0.7) + "\" height=\"" + detail::num(bh) + "\" fill=\"" + detail::palette(0) + "\"/>\n";
    body += "<text x=\"" + detail::num(bx) + "\" y=\"" + std::to_string(h - bottom + 16) + "\" font-size=\"11\">" +
            labels[i] + " (" + detail::num(values[i]) + ")</text>\n";
  }
  detail::save(path, body, w, h);
}

}  // namespace wrel::cli
