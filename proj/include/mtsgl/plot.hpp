#pragma once

// Line plots written as binary PPM, with a plain-text legend next to them.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mtsgl/error.hpp"

namespace mtsgl {

struct PlotSeries {
  std::string label;
  std::vector<double> values;  // y per x = 0, 1, 2, ...
};

inline std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out(v.size());
  double acc = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= window) acc -= v[i - window];
    out[i] = acc / double(std::min(i + 1, window));
  }
  return out;
}

inline constexpr std::array<std::array<unsigned char, 3>, 8> kPlotPalette = {{
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
    {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}}};

/// Draws all series on shared axes with horizontal grid lines at 1/4 steps of
/// the y range. Writes `path` and `path` with a .txt extension listing
/// colour, label and y range.
inline void write_line_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series,
                            std::size_t width = 640, std::size_t height = 400) {
  detail::require(width >= 64 && height >= 64, "write_line_plot", "canvas ", width, "x", height,
                  " too small");
  std::vector<unsigned char> px(width * height * 3, 255);
  auto put = [&](long x, long y, const std::array<unsigned char, 3>& c) {
    if (x < 0 || y < 0 || x >= long(width) || y >= long(height)) return;
    std::copy(c.begin(), c.end(), px.begin() + long((std::size_t(y) * width + std::size_t(x)) * 3));
  };
  double lo = INFINITY, hi = -INFINITY;
  std::size_t n = 0;
  for (const auto& s : series)
    for (double v : s.values)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        n = std::max(n, s.values.size());
      }
  if (!(hi > lo)) {
    lo = std::isfinite(lo) ? lo - 1 : 0;
    hi = lo + 2;
  }
  const long left = 40, right = long(width) - 10, top = 10, bottom = long(height) - 30;
  const std::array<unsigned char, 3> axis{0, 0, 0}, grid{220, 220, 220};
  for (int k = 1; k <= 3; ++k)
    for (long x = left; x <= right; ++x) put(x, bottom - (bottom - top) * k / 4, grid);
  for (long x = left; x <= right; ++x) put(x, bottom, axis);
  for (long y = top; y <= bottom; ++y) put(left, y, axis);
  auto to_px = [&](std::size_t i, double v) {
    const double fx = n > 1 ? double(i) / double(n - 1) : 0.0;
    return std::pair<double, double>{left + fx * double(right - left),
                                     bottom - (v - lo) / (hi - lo) * double(bottom - top)};
  };
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& c = kPlotPalette[s % kPlotPalette.size()];
    const auto& v = series[s].values;
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
      if (!std::isfinite(v[i]) || !std::isfinite(v[i + 1])) continue;
      const auto [x0, y0] = to_px(i, v[i]);
      const auto [x1, y1] = to_px(i + 1, v[i + 1]);
      const int steps = int(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
      for (int t = 0; t <= steps; ++t) {
        const double a = double(t) / steps;
        put(std::lround(x0 + a * (x1 - x0)), std::lround(y0 + a * (y1 - y0)), c);
      }
    }
    // Legend swatch along the bottom margin, in series order.
    for (long y = bottom + 10; y < bottom + 20; ++y)
      for (long x = left + long(s) * 24; x < left + long(s) * 24 + 16; ++x) put(x, y, c);
  }
  std::ofstream os(path, std::ios::binary);
  detail::require(static_cast<bool>(os), "write_line_plot", "cannot open '", path.string(), "'");
  os << "P6\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), std::streamsize(px.size()));
  auto legend_path = path;
  legend_path.replace_extension(".txt");
  std::ofstream legend(legend_path);
  legend << "y_min " << lo << "\ny_max " << hi << "\nx_points " << n << '\n';
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& c = kPlotPalette[s % kPlotPalette.size()];
    legend << int(c[0]) << ',' << int(c[1]) << ',' << int(c[2]) << ' ' << series[s].label << '\n';
  }
}

}  // namespace mtsgl
