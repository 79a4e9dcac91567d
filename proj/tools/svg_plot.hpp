#pragma once

// Minimal SVG line charts for run diagnostics.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <fmt/core.h>

#include "cpgan/errors.hpp"

namespace plot {

using Points = std::vector<std::pair<double, double>>;

struct Series {
  std::string name;
  Points points;
};

inline Points moving_average(const Points& pts, std::size_t window) {
  if (window <= 1 || pts.empty()) return pts;
  Points out;
  out.reserve(pts.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    sum += pts[i].second;
    if (i >= window) sum -= pts[i - window].second;
    const auto n = static_cast<double>(std::min(i + 1, window));
    out.emplace_back(pts[i].first, sum / n);
  }
  return out;
}

inline void write_svg(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                      const std::string& ylabel, const std::vector<Series>& series) {
  constexpr double W = 900, H = 520, L = 70, R = 220, T = 40, B = 50;
  static const char* kColours[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
                                   "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#000000"};
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      if (!std::isfinite(y)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ofstream out(path);
  if (!out) throw cpgan::IoError("cannot write " + path.string());
  out << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif">)", W, H)
      << '\n';
  out << fmt::format(R"(<rect width="{}" height="{}" fill="white"/>)", W, H) << '\n';
  out << fmt::format(R"(<text x="{}" y="24" font-size="16">{}</text>)", L, title) << '\n';
  out << fmt::format(R"(<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>)", L, T, W - L - R,
                     H - T - B)
      << '\n';
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4, fy = y0 + (y1 - y0) * i / 4;
    out << fmt::format(R"(<text x="{:.1f}" y="{}" font-size="11" text-anchor="middle">{:.4g}</text>)", px(fx),
                       H - B + 16, fx)
        << '\n';
    out << fmt::format(R"(<text x="{}" y="{:.1f}" font-size="11" text-anchor="end">{:.4g}</text>)", L - 6,
                       py(fy) + 4, fy)
        << '\n';
  }
  out << fmt::format(R"(<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>)", (L + W - R) / 2, H - 12,
                     xlabel)
      << '\n';
  out << fmt::format(R"svg(<text x="16" y="{}" font-size="12" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>)svg",
                     (T + H - B) / 2, (T + H - B) / 2, ylabel)
      << '\n';
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* colour = kColours[k % std::size(kColours)];
    std::string d;
    for (auto [x, y] : series[k].points) {
      if (!std::isfinite(y)) continue;
      d += fmt::format("{}{:.1f},{:.1f} ", d.empty() ? "M" : "L", px(x), py(y));
    }
    out << fmt::format(R"(<path d="{}" fill="none" stroke="{}" stroke-width="1.3"/>)", d, colour) << '\n';
    const double ly = T + 14 + 18.0 * k;
    out << fmt::format(R"(<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"/>)", W - R + 12, ly,
                       W - R + 32, ly, colour)
        << '\n';
    out << fmt::format(R"(<text x="{}" y="{}" font-size="12">{}</text>)", W - R + 38, ly + 4, series[k].name) << '\n';
  }
  out << "</svg>\n";
}

}  // namespace plot
