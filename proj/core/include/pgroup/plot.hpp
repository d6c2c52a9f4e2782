#pragma once

#include <span>
#include <vector>

#include "pgroup/bitmap.hpp"

namespace pgroup {

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
};

/// Categorical palette entry i (cycles).
Color palette(std::size_t i);
/// Blue-white-red map of v in [-1, 1]; values outside are clamped.
Color diverging(double v);
/// Black-to-yellow map of v in [0, 1]; values outside are clamped.
Color sequential(double v);

void fill_rect(RgbImage& img, long x0, long y0, long x1, long y1, Color c);
void draw_line(RgbImage& img, long x0, long y0, long x1, long y1, Color c);

struct BarChartOptions {
  double y_min = 0;
  double y_max = 1;
  std::size_t group_size = 1;  ///< consecutive bars sharing a group get palette colours 0..group_size-1
  std::size_t bar_width = 24;
  std::size_t height = 240;
  std::size_t y_ticks = 5;
};

/// Bars with optional symmetric error bars (errors empty or one per value),
/// a left axis with tick marks and a baseline.
RgbImage bar_chart(std::span<const double> values, std::span<const double> errors, const BarChartOptions& opt = {});

/// Row-major map of `values` (height x width) with each cell scale x scale
/// pixels. Diverging maps use [-limit, limit]; sequential maps use [0, limit].
RgbImage heatmap(std::span<const double> values, std::size_t width, std::size_t height, double limit,
                 bool diverging_map, std::size_t scale = 1);

/// Greyscale raster scaled by nearest neighbour.
RgbImage to_rgb(const GrayImage& img, std::size_t scale = 1);

/// Images side by side, top aligned, separated by `gap` white pixels.
RgbImage hconcat(const std::vector<RgbImage>& images, std::size_t gap = 4);
/// Images stacked, left aligned, separated by `gap` white pixels.
RgbImage vconcat(const std::vector<RgbImage>& images, std::size_t gap = 4);

}  // namespace pgroup
