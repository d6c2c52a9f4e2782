#include "pgroup/bitmap.hpp"

#include <png.h>

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "pgroup/tensor.hpp"

namespace pgroup {

std::size_t count_foreground(const GrayImage& img) {
  return std::size_t(std::count_if(img.pixels.begin(), img.pixels.end(), [](std::uint8_t v) { return v != 0; }));
}

bool any_overlap(const GrayImage& a, const GrayImage& b) {
  require(a.width == b.width && a.height == b.height, "any_overlap: size mismatch");
  for (std::size_t i = 0; i < a.pixels.size(); ++i)
    if (a.pixels[i] && b.pixels[i]) return true;
  return false;
}

GrayImage max_composite(const GrayImage& a, const GrayImage& b) {
  require(a.width == b.width && a.height == b.height, "max_composite: size mismatch");
  GrayImage out = a;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = std::max(a.pixels[i], b.pixels[i]);
  return out;
}

GrayImage dilate8(const GrayImage& mask, int steps) {
  GrayImage cur = mask;
  for (int s = 0; s < steps; ++s) {
    GrayImage next(cur.width, cur.height);
    for (long y = 0; y < long(cur.height); ++y)
      for (long x = 0; x < long(cur.width); ++x) {
        bool on = false;
        for (long dy = -1; dy <= 1 && !on; ++dy)
          for (long dx = -1; dx <= 1 && !on; ++dx) on = cur.get(x + dx, y + dy) != 0;
        if (on) next.at(std::size_t(x), std::size_t(y)) = 255;
      }
    cur = std::move(next);
  }
  return cur;
}

bool touches_border(const GrayImage& mask) {
  for (std::size_t x = 0; x < mask.width; ++x)
    if (mask.at(x, 0) || mask.at(x, mask.height - 1)) return true;
  for (std::size_t y = 0; y < mask.height; ++y)
    if (mask.at(0, y) || mask.at(mask.width - 1, y)) return true;
  return false;
}

std::pair<double, double> center_of_mass(const GrayImage& mask) {
  double sx = 0, sy = 0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) {
        sx += double(x) + 0.5;
        sy += double(y) + 0.5;
        ++n;
      }
  require(n > 0, "center_of_mass: empty mask");
  return {sx / double(n), sy / double(n)};
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255 || w == 0 || h == 0)
    throw std::runtime_error(path.string() + ": not an 8-bit binary PGM");
  in.get();
  GrayImage img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated PGM");
  return img;
}

namespace {

void write_png_rows(const std::filesystem::path& path, std::size_t width, std::size_t height, int color_type,
                    const std::uint8_t* data, std::size_t stride) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) png_write_row(png, const_cast<png_bytep>(data + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::filesystem::path& path, const GrayImage& img) {
  write_png_rows(path, img.width, img.height, PNG_COLOR_TYPE_GRAY, img.pixels.data(), img.width);
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  write_png_rows(path, img.width, img.height, PNG_COLOR_TYPE_RGB, img.pixels.data(), img.width * 3);
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr))
    throw std::runtime_error("SHA-256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

}  // namespace pgroup
