#include "pgroup/plot.hpp"

#include <algorithm>
#include <cmath>

#include "pgroup/tensor.hpp"

namespace pgroup {
namespace {

std::uint8_t lerp8(double a, double b, double t) { return std::uint8_t(std::lround(a + (b - a) * t)); }

constexpr Color kAxis{40, 40, 40};

}  // namespace

Color palette(std::size_t i) {
  static constexpr Color kColors[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
                                      {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};
  return kColors[i % std::size(kColors)];
}

Color diverging(double v) {
  v = std::clamp(v, -1.0, 1.0);
  if (v < 0) return {lerp8(255, 33, -v), lerp8(255, 102, -v), lerp8(255, 172, -v)};
  return {lerp8(255, 178, v), lerp8(255, 24, v), lerp8(255, 43, v)};
}

Color sequential(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return {lerp8(0, 255, std::min(1.0, 2 * v)), lerp8(0, 230, v * v), lerp8(0, 60, v)};
}

void fill_rect(RgbImage& img, long x0, long y0, long x1, long y1, Color c) {
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) img.set(x, y, c.r, c.g, c.b);
}

void draw_line(RgbImage& img, long x0, long y0, long x1, long y1, Color c) {
  const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  while (true) {
    img.set(x0, y0, c.r, c.g, c.b);
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

RgbImage bar_chart(std::span<const double> values, std::span<const double> errors, const BarChartOptions& opt) {
  require(errors.empty() || errors.size() == values.size(), "bar_chart: one error per value");
  require(opt.y_max > opt.y_min, "bar_chart: empty value range");
  require(opt.group_size >= 1 && opt.bar_width >= 2 && opt.height >= 40, "bar_chart: degenerate layout");
  const long left = 30, top = 10, bottom = 20;
  const long plot_h = long(opt.height) - top - bottom;
  const long bw = long(opt.bar_width);
  const std::size_t groups = (values.size() + opt.group_size - 1) / opt.group_size;
  const long group_w = long(opt.group_size) * bw + bw;
  RgbImage img(std::size_t(left + long(groups) * group_w + bw), opt.height);

  auto y_of = [&](double v) {
    const double t = std::clamp((v - opt.y_min) / (opt.y_max - opt.y_min), 0.0, 1.0);
    return top + plot_h - long(std::lround(t * double(plot_h)));
  };
  const long base = y_of(std::clamp(0.0, opt.y_min, opt.y_max));

  for (std::size_t i = 0; i < values.size(); ++i) {
    const long x0 = left + long(i / opt.group_size) * group_w + bw / 2 + long(i % opt.group_size) * bw;
    const long yv = y_of(values[i]);
    fill_rect(img, x0 + 1, std::min(yv, base), x0 + bw - 2, std::max(yv, base), palette(i % opt.group_size));
    if (!errors.empty() && errors[i] > 0) {
      const long xm = x0 + bw / 2;
      const long ylo = y_of(values[i] - errors[i]), yhi = y_of(values[i] + errors[i]);
      draw_line(img, xm, ylo, xm, yhi, kAxis);
      draw_line(img, xm - 3, ylo, xm + 3, ylo, kAxis);
      draw_line(img, xm - 3, yhi, xm + 3, yhi, kAxis);
    }
  }
  draw_line(img, left - 1, top, left - 1, top + plot_h, kAxis);
  draw_line(img, left - 1, base, long(img.width) - 1, base, kAxis);
  for (std::size_t k = 0; k <= opt.y_ticks; ++k) {
    const double v = opt.y_min + (opt.y_max - opt.y_min) * double(k) / double(std::max<std::size_t>(1, opt.y_ticks));
    const long y = y_of(v);
    draw_line(img, left - 6, y, left - 1, y, kAxis);
  }
  return img;
}

RgbImage heatmap(std::span<const double> values, std::size_t width, std::size_t height, double limit,
                 bool diverging_map, std::size_t scale) {
  require(values.size() == width * height, "heatmap: value count does not match the grid");
  require(scale >= 1, "heatmap: scale must be positive");
  const double lim = limit > 0 ? limit : 1.0;
  RgbImage img(width * scale, height * scale);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double v = values[y * width + x] / lim;
      const Color c = diverging_map ? diverging(v) : sequential(v);
      fill_rect(img, long(x * scale), long(y * scale), long((x + 1) * scale) - 1, long((y + 1) * scale) - 1, c);
    }
  return img;
}

RgbImage to_rgb(const GrayImage& src, std::size_t scale) {
  require(scale >= 1, "to_rgb: scale must be positive");
  RgbImage img(src.width * scale, src.height * scale);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const auto v = src.at(x / scale, y / scale);
      img.set(long(x), long(y), v, v, v);
    }
  return img;
}

RgbImage hconcat(const std::vector<RgbImage>& images, std::size_t gap) {
  std::size_t w = 0, h = 0;
  for (const auto& im : images) {
    w += im.width;
    h = std::max(h, im.height);
  }
  if (!images.empty()) w += gap * (images.size() - 1);
  RgbImage out(w, h);
  std::size_t x0 = 0;
  for (const auto& im : images) {
    for (std::size_t y = 0; y < im.height; ++y)
      std::copy_n(&im.pixels[y * im.width * 3], im.width * 3, &out.pixels[(y * w + x0) * 3]);
    x0 += im.width + gap;
  }
  return out;
}

RgbImage vconcat(const std::vector<RgbImage>& images, std::size_t gap) {
  std::size_t w = 0, h = 0;
  for (const auto& im : images) {
    h += im.height;
    w = std::max(w, im.width);
  }
  if (!images.empty()) h += gap * (images.size() - 1);
  RgbImage out(w, h);
  std::size_t y0 = 0;
  for (const auto& im : images) {
    for (std::size_t y = 0; y < im.height; ++y)
      std::copy_n(&im.pixels[y * im.width * 3], im.width * 3, &out.pixels[((y0 + y) * w) * 3]);
    y0 += im.height + gap;
  }
  return out;
}

}  // namespace pgroup
