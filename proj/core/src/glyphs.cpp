#include "pgroup/glyphs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "pgroup/tensor.hpp"

namespace pgroup {

namespace {

using Strokes = std::vector<Polyline>;

Polyline line(std::initializer_list<Point2> pts) { return Polyline(pts); }

/// Elliptic arc from a0 to a1 degrees; angles increase counter-clockwise on screen.
Polyline arc(double cx, double cy, double rx, double ry, double a0, double a1) {
  Polyline out;
  int steps = std::max(2, int(std::ceil(std::abs(a1 - a0) / 10.0)));
  for (int i = 0; i <= steps; ++i) {
    double a = (a0 + (a1 - a0) * i / steps) * std::numbers::pi / 180.0;
    out.emplace_back(cx + rx * std::cos(a), cy - ry * std::sin(a));
  }
  return out;
}

Polyline join(std::initializer_list<Polyline> parts) {
  Polyline out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::array<Strokes, kGlyphCount> angular() {
  return {{
      {line({{0, 6}, {2, 0}, {4, 6}}), line({{0.67, 4}, {3.33, 4}})},
      {line({{0, 0}, {0, 6}}), line({{0, 0}, {3, 0}, {4, 1}, {4, 2}, {3, 3}, {0, 3}}),
       line({{3, 3}, {4, 4}, {4, 5}, {3, 6}, {0, 6}})},
      {line({{4, 0}, {0, 0}, {0, 6}, {4, 6}})},
      {line({{0, 0}, {0, 6}, {2.5, 6}, {4, 4.5}, {4, 1.5}, {2.5, 0}, {0, 0}})},
      {line({{4, 0}, {0, 0}, {0, 6}, {4, 6}}), line({{0, 3}, {3, 3}})},
      {line({{4, 0}, {0, 0}, {0, 6}}), line({{0, 3}, {3, 3}})},
      {line({{4, 0}, {0, 0}, {0, 6}, {4, 6}, {4, 3}, {2, 3}})},
      {line({{0, 0}, {0, 6}}), line({{4, 0}, {4, 6}}), line({{0, 3}, {4, 3}})},
      {line({{1, 0}, {3, 0}}), line({{2, 0}, {2, 6}}), line({{1, 6}, {3, 6}})},
      {line({{1, 0}, {4, 0}}), line({{4, 0}, {4, 6}, {0, 6}, {0, 4}})},
      {line({{0, 0}, {0, 6}}), line({{4, 0}, {0, 4}}), line({{1.5, 2.5}, {4, 6}})},
      {line({{0, 0}, {0, 6}, {4, 6}})},
      {line({{0, 6}, {0, 0}, {2, 3}, {4, 0}, {4, 6}})},
      {line({{0, 6}, {0, 0}, {4, 6}, {4, 0}})},
      {line({{0, 0}, {4, 0}, {4, 6}, {0, 6}, {0, 0}})},
      {line({{0, 6}, {0, 0}, {4, 0}, {4, 3}, {0, 3}})},
      {line({{0, 0}, {4, 0}, {4, 6}, {0, 6}, {0, 0}}), line({{2, 4}, {4, 6}})},
      {line({{0, 6}, {0, 0}, {4, 0}, {4, 3}, {0, 3}}), line({{2, 3}, {4, 6}})},
      {line({{4, 0}, {0, 0}, {0, 3}, {4, 3}, {4, 6}, {0, 6}})},
      {line({{0, 0}, {4, 0}}), line({{2, 0}, {2, 6}})},
      {line({{0, 0}, {0, 6}, {4, 6}, {4, 0}})},
      {line({{0, 0}, {2, 6}, {4, 0}})},
      {line({{0, 0}, {1, 6}, {2, 3}, {3, 6}, {4, 0}})},
      {line({{0, 0}, {4, 6}}), line({{4, 0}, {0, 6}})},
      {line({{0, 0}, {2, 3}, {4, 0}}), line({{2, 3}, {2, 6}})},
      {line({{0, 0}, {4, 0}, {0, 6}, {4, 6}})},
  }};
}

std::array<Strokes, kGlyphCount> rounded() {
  return {{
      {join({line({{0, 6}}), arc(2, 2, 2, 2, 180, 0), line({{4, 6}})}), line({{0, 4}, {4, 4}})},
      {line({{0, 0}, {0, 6}}), join({line({{0, 0}}), arc(2.5, 1.5, 1.5, 1.5, 90, -90), line({{0, 3}})}),
       join({line({{0, 3}}), arc(2.5, 4.5, 1.5, 1.5, 90, -90), line({{0, 6}})})},
      {arc(2, 3, 2, 3, 45, 315)},
      {line({{0, 0}, {0, 6}}), join({line({{0, 0}}), arc(1, 3, 3, 3, 90, -90), line({{0, 6}})})},
      {arc(2, 3, 2, 3, 30, 330), line({{0, 3}, {3, 3}})},
      {join({line({{0, 6}}), arc(1, 1, 1, 1, 180, 90), line({{4, 0}})}), line({{0, 3}, {3, 3}})},
      {join({arc(2, 3, 2, 3, 45, 360), line({{2, 3}})})},
      {line({{0, 0}, {0, 6}}), join({line({{4, 6}}), arc(2, 3, 2, 1.5, 0, 180)})},
      {join({line({{2, 0}}), arc(3, 5, 1, 1, 180, 270)})},
      {line({{1, 0}, {4, 0}}), join({line({{3, 0}}), arc(1.5, 4.5, 1.5, 1.5, 0, -180)})},
      {line({{0, 0}, {0, 6}}), line({{4, 0}, {0, 4}}), join({line({{1.5, 2.5}}), arc(4, 5, 1, 1, 180, 270)})},
      {join({line({{0, 0}}), arc(1, 5, 1, 1, 180, 270), line({{4, 6}})})},
      {join({line({{0, 6}}), arc(1, 1, 1, 1, 180, 0), line({{2, 3}})}),
       join({line({{2, 1}}), arc(3, 1, 1, 1, 180, 0), line({{4, 6}})})},
      {join({line({{0, 6}}), arc(2, 2, 2, 2, 180, 0), line({{4, 6}})})},
      {arc(2, 3, 2, 3, 0, 360)},
      {line({{0, 6}, {0, 0}}), join({line({{0, 0}}), arc(2.5, 1.75, 1.5, 1.75, 90, -90), line({{0, 3.5}})})},
      {arc(2, 3, 2, 3, 0, 360), line({{2.5, 4.5}, {4, 6}})},
      {line({{0, 6}, {0, 0}}), join({line({{0, 0}}), arc(2.5, 1.75, 1.5, 1.75, 90, -90), line({{0, 3.5}})}),
       line({{2, 3.5}, {4, 6}})},
      {arc(2, 1.5, 2, 1.5, 20, 270), arc(2, 4.5, 2, 1.5, 90, -180)},
      {line({{0, 0}, {4, 0}}), join({line({{2, 0}}), arc(3, 5, 1, 1, 180, 270)})},
      {join({line({{0, 0}}), arc(2, 4, 2, 2, 180, 360), line({{4, 0}})})},
      {join({line({{0, 0}}), arc(2, 5.5, 0.5, 0.5, 180, 360), line({{4, 0}})})},
      {join({line({{0, 0}}), arc(1, 4, 1, 2, 180, 360), line({{2, 2}})}),
       join({arc(3, 4, 1, 2, 180, 360), line({{4, 0}})})},
      {arc(0, 3, 2, 3, 90, -90), arc(4, 3, 2, 3, 90, 270)},
      {join({line({{0, 0}}), arc(2, 1.5, 2, 1.5, 180, 360), line({{4, 0}})}), line({{2, 3}, {2, 6}})},
      {line({{0, 0}, {4, 0}, {0, 6}, {4, 6}})},
  }};
}

}  // namespace

const std::vector<Polyline>& glyph_strokes(int letter, int style) {
  require(letter >= 0 && letter < kGlyphCount, "glyph_strokes: letter out of range");
  require(style >= 0 && style < kGlyphStyles, "glyph_strokes: style out of range");
  static const std::array<std::array<Strokes, kGlyphCount>, kGlyphStyles> table{angular(), rounded()};
  return table[std::size_t(style)][std::size_t(letter)];
}

void draw_capsule(GrayImage& img, Point2 a, Point2 b, double width, std::uint8_t value) {
  double r = width / 2.0;
  long x0 = long(std::floor(std::min(a.first, b.first) - r - 1));
  long x1 = long(std::ceil(std::max(a.first, b.first) + r + 1));
  long y0 = long(std::floor(std::min(a.second, b.second) - r - 1));
  long y1 = long(std::ceil(std::max(a.second, b.second) + r + 1));
  double dx = b.first - a.first, dy = b.second - a.second;
  double len2 = dx * dx + dy * dy;
  for (long y = std::max(0L, y0); y <= std::min(long(img.height) - 1, y1); ++y)
    for (long x = std::max(0L, x0); x <= std::min(long(img.width) - 1, x1); ++x) {
      double px = double(x) + 0.5 - a.first, py = double(y) + 0.5 - a.second;
      double t = len2 > 0 ? std::clamp((px * dx + py * dy) / len2, 0.0, 1.0) : 0.0;
      double ex = px - t * dx, ey = py - t * dy;
      if (ex * ex + ey * ey <= r * r) img.at(std::size_t(x), std::size_t(y)) = value;
    }
}

void draw_disc(GrayImage& img, long cx, long cy, int radius, std::uint8_t value) {
  for (long dy = -radius; dy <= radius; ++dy)
    for (long dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= long(radius) * radius && img.contains(cx + dx, cy + dy))
        img.at(std::size_t(cx + dx), std::size_t(cy + dy)) = value;
}

GrayImage render_glyph(int letter, int style, std::size_t canvas, double height_px, double stroke_px) {
  GrayImage img(canvas, canvas);
  double unit = height_px / kGlyphGridHeight;
  double c = double(canvas) / 2.0;
  auto map = [&](Point2 p) {
    return Point2{c + (p.first - kGlyphGridWidth / 2) * unit, c + (p.second - kGlyphGridHeight / 2) * unit};
  };
  for (const auto& stroke : glyph_strokes(letter, style)) {
    if (stroke.size() == 1) draw_capsule(img, map(stroke[0]), map(stroke[0]), stroke_px);
    for (std::size_t i = 1; i < stroke.size(); ++i) draw_capsule(img, map(stroke[i - 1]), map(stroke[i]), stroke_px);
  }
  return img;
}

}  // namespace pgroup
