#pragma once

#include <utility>
#include <vector>

#include "pgroup/bitmap.hpp"

namespace pgroup {

inline constexpr int kGlyphCount = 26;  ///< A..Z
inline constexpr int kGlyphStyles = 2;  ///< 0 angular, 1 rounded
inline constexpr double kGlyphGridWidth = 4.0;
inline constexpr double kGlyphGridHeight = 6.0;

using Point2 = std::pair<double, double>;
using Polyline = std::vector<Point2>;

/// Stroke skeleton of a letter on a 4 x 6 grid (y grows downwards).
const std::vector<Polyline>& glyph_strokes(int letter, int style);

/// Sets every pixel whose centre lies within width/2 of segment a-b to `value`.
void draw_capsule(GrayImage& img, Point2 a, Point2 b, double width, std::uint8_t value = 255);

/// Filled disc of the given radius centred on pixel (cx, cy).
void draw_disc(GrayImage& img, long cx, long cy, int radius, std::uint8_t value = 255);

/// Binary glyph mask on a square canvas with the grid centre at the canvas centre.
GrayImage render_glyph(int letter, int style, std::size_t canvas, double height_px, double stroke_px);

}  // namespace pgroup
