#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pgroup {

/// 8-bit single-channel raster, row-major. Masks use 0 / 255.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}

  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  /// Zero outside the raster.
  std::uint8_t get(long x, long y) const {
    return x < 0 || y < 0 || x >= long(width) || y >= long(height) ? 0 : pixels[std::size_t(y) * width + std::size_t(x)];
  }
  bool contains(long x, long y) const { return x >= 0 && y >= 0 && x < long(width) && y < long(height); }
  bool empty() const { return pixels.empty(); }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  ///< interleaved RGB

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 255) : width(w), height(h), pixels(w * h * 3, fill) {}

  void set(long x, long y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= long(width) || y >= long(height)) return;
    auto* p = &pixels[(std::size_t(y) * width + std::size_t(x)) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
};

std::size_t count_foreground(const GrayImage& img);
bool any_overlap(const GrayImage& a, const GrayImage& b);
/// Pixelwise maximum of equally sized images.
GrayImage max_composite(const GrayImage& a, const GrayImage& b);
/// Dilation by the 8-neighbourhood, `steps` times.
GrayImage dilate8(const GrayImage& mask, int steps = 1);
/// True if any foreground pixel lies on the outermost row or column.
bool touches_border(const GrayImage& mask);
/// Mean (x, y) of foreground pixel centres; requires a nonempty mask.
std::pair<double, double> center_of_mass(const GrayImage& mask);

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const GrayImage& img);
void write_png(const std::filesystem::path& path, const RgbImage& img);

/// Lower-case hex SHA-256 of a byte string / file.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace pgroup
