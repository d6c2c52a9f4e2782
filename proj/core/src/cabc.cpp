#include "pgroup/cabc.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

namespace pgroup {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr int kSampleAttempts = 200;
constexpr int kPositionAttempts = 20;

/// Bilinear foreground coverage in [0, 1] at a continuous point; pixel (i, j)
/// has its centre at (i + 0.5, j + 0.5).
double sample_bilinear(const GrayImage& img, double x, double y) {
  const double u = x - 0.5, v = y - 0.5;
  const long i0 = long(std::floor(u)), j0 = long(std::floor(v));
  const double fx = u - double(i0), fy = v - double(j0);
  auto f = [&](long i, long j) { return img.get(i, j) ? 1.0 : 0.0; };
  return (1 - fy) * ((1 - fx) * f(i0, j0) + fx * f(i0 + 1, j0)) + fy * ((1 - fx) * f(i0, j0 + 1) + fx * f(i0 + 1, j0 + 1));
}

double lognormal15(Rng& rng, double sd) { return sd == 0 ? 1.0 : std::pow(1.5, normal(rng, 0, sd)); }
double gauss(Rng& rng, double sd) { return sd == 0 ? 0.0 : normal(rng, 0, sd); }

struct Row {
  double phi_letter, phi_common, scale_letter, scale_common, shear_letter, shear_common;
  double theta_half, dtheta_lo, r_lo, r_hi;
};

Row table_row(Difficulty d) {
  const double s2 = std::numbers::sqrt2;
  switch (d) {
    case Difficulty::easy: return {0, 30, 0, 0.5, 0, 0.2, 30, 170, 25, 30};
    case Difficulty::intermediate: return {30 / s2, 30 / s2, 0.5 / s2, 0.5 / s2, 0.2 / s2, 0.2 / s2, 60, 110, 20, 35};
    case Difficulty::hard: return {30, 0, 0.5, 0, 0.2, 0, 90, 70, 15, 40};
  }
  throw ContractError("unknown difficulty");
}

}  // namespace

std::string difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::intermediate: return "intermediate";
    case Difficulty::hard: return "hard";
  }
  return "?";
}

Difficulty parse_difficulty(const std::string& s) {
  if (s == "easy") return Difficulty::easy;
  if (s == "intermediate") return Difficulty::intermediate;
  if (s == "hard") return Difficulty::hard;
  throw ContractError("unknown cABC difficulty '" + s + "' (expected easy, intermediate or hard)");
}

std::string control_name(Control c) {
  switch (c) {
    case Control::none: return "none";
    case Control::luminance: return "luminance";
    case Control::positional: return "positional";
  }
  return "?";
}

Control parse_control(const std::string& s) {
  if (s == "none") return Control::none;
  if (s == "luminance") return Control::luminance;
  if (s == "positional") return Control::positional;
  throw ContractError("unknown cABC control '" + s + "' (expected none, luminance or positional)");
}

void CabcParams::validate() const {
  require(image_size >= 32 && image_size % 4 == 0, "cabc.image_size must be a multiple of 4 and at least 32");
  require(marker_radius >= 1, "cabc.marker_radius must be positive");
  require(marker_separation >= 0, "cabc.marker_separation must be nonnegative");
  require(glyph_height > 0 && stroke_width > 0, "cabc glyph geometry must be positive");
  require(warp_sigma > 0 && warp_gaussians > 0, "cabc warp template must be nonempty");
  require(warp_gain >= 0 && warp_mean_displacement >= 0, "cabc warp gain must be nonnegative");
  require(task == Task::classification || control == Control::none,
          "cABC controls are defined for the classification task only");
  const auto l = layout();
  require(l.train_count + l.val_count > 0, "cabc.count must be positive");
}

DatasetLayout CabcParams::layout() const {
  DatasetLayout l;
  const bool seg = task == Task::segmentation;
  const std::size_t total = count ? count : (seg ? 10400 : 45000);
  if (val_count) {
    require(val_count < total, "cabc.val_count must be smaller than cabc.count");
    l.val_count = val_count;
    l.train_count = total - val_count;
  } else if (seg && !count) {
    l.val_count = 400;
    l.train_count = 10000;
  } else {
    l = split_counts(total, 0.1);
  }
  l.workers = workers;
  return l;
}

void CabcParams::write(KeyValueConfig& kv, const std::string& prefix) const {
  kv.set(prefix + "difficulty", difficulty_name(difficulty));
  kv.set(prefix + "control", control_name(control));
  kv.set(prefix + "task", task_name(task));
  kv.set(prefix + "image_size", std::to_string(image_size));
  kv.set(prefix + "marker_radius", std::to_string(marker_radius));
  kv.set(prefix + "marker_separation", format_double(marker_separation));
  kv.set(prefix + "glyph_height", format_double(glyph_height));
  kv.set(prefix + "stroke_width", format_double(stroke_width));
  kv.set(prefix + "warp_sigma", format_double(warp_sigma));
  kv.set(prefix + "warp_gaussians", std::to_string(warp_gaussians));
  kv.set(prefix + "warp_mean_displacement", format_double(warp_mean_displacement));
  kv.set(prefix + "warp_gain", format_double(warp_gain));
  kv.set(prefix + "seed", std::to_string(seed));
  kv.set(prefix + "count", std::to_string(count));
  kv.set(prefix + "val_count", std::to_string(val_count));
}

CabcParams CabcParams::read(const KeyValueConfig& kv, const std::string& prefix) {
  CabcParams p;
  p.difficulty = parse_difficulty(kv.get_or(prefix + "difficulty", difficulty_name(p.difficulty)));
  p.control = parse_control(kv.get_or(prefix + "control", control_name(p.control)));
  p.task = parse_task(kv.get_or(prefix + "task", task_name(p.task)));
  p.image_size = kv.get_size(prefix + "image_size", p.image_size);
  p.marker_radius = int(kv.get_or(prefix + "marker_radius", std::int64_t(p.marker_radius)));
  p.marker_separation = kv.get_or(prefix + "marker_separation", p.marker_separation);
  p.glyph_height = kv.get_or(prefix + "glyph_height", p.glyph_height);
  p.stroke_width = kv.get_or(prefix + "stroke_width", p.stroke_width);
  p.warp_sigma = kv.get_or(prefix + "warp_sigma", p.warp_sigma);
  p.warp_gaussians = kv.get_size(prefix + "warp_gaussians", p.warp_gaussians);
  p.warp_mean_displacement = kv.get_or(prefix + "warp_mean_displacement", p.warp_mean_displacement);
  p.warp_gain = kv.get_or(prefix + "warp_gain", p.warp_gain);
  p.seed = kv.get_or(prefix + "seed", p.seed);
  p.count = kv.get_size(prefix + "count", p.count);
  p.val_count = kv.get_size(prefix + "val_count", p.val_count);
  p.validate();
  return p;
}

TransformParams sample_transform_params(Difficulty d, Rng& rng) {
  const Row row = table_row(d);
  TransformParams tp;
  tp.phi1 = gauss(rng, row.phi_letter);
  tp.phi2 = gauss(rng, row.phi_letter);
  tp.phic = gauss(rng, row.phi_common);
  tp.s1 = lognormal15(rng, row.scale_letter);
  tp.s2 = lognormal15(rng, row.scale_letter);
  tp.sc = lognormal15(rng, row.scale_common);
  tp.e1 = gauss(rng, row.shear_letter);
  tp.e2 = gauss(rng, row.shear_letter);
  tp.ec = gauss(rng, row.shear_common);
  resample_positions(tp, d, rng);
  return tp;
}

void resample_positions(TransformParams& tp, Difficulty d, Rng& rng) {
  const Row row = table_row(d);
  tp.theta = uniform(rng, -row.theta_half, row.theta_half);
  const double mag = uniform(rng, row.dtheta_lo, 180);
  tp.dtheta = (rng() & 1) ? mag : -mag;
  tp.r = uniform(rng, row.r_lo, row.r_hi);
}

GrayImage affine_transform(const GrayImage& src, double scale, double rotation_deg, double shear, ShearAxis axis) {
  require(scale > 0, "affine_transform: scale must be positive");
  const double c = std::cos(rotation_deg * kDeg), s = std::sin(rotation_deg * kDeg);
  // Screen coordinates (y down): counter-clockwise rotation is [[c, s], [-s, c]].
  const double r00 = c * scale, r01 = s * scale, r10 = -s * scale, r11 = c * scale;
  double a00 = r00, a01 = r01, a10 = r10, a11 = r11;
  if (axis == ShearAxis::horizontal) {
    a00 = r00 + shear * r10;
    a01 = r01 + shear * r11;
  } else {
    a10 = r10 + shear * r00;
    a11 = r11 + shear * r01;
  }
  const double det = a00 * a11 - a01 * a10;
  require(std::abs(det) > 1e-12, "affine_transform: singular transform");
  const double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;
  const double cx = double(src.width) / 2, cy = double(src.height) / 2;
  GrayImage out(src.width, src.height);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      const double qx = double(x) + 0.5 - cx, qy = double(y) + 0.5 - cy;
      const double px = cx + i00 * qx + i01 * qy, py = cy + i10 * qx + i11 * qy;
      if (sample_bilinear(src, px, py) >= 0.5) out.at(x, y) = 255;
    }
  return out;
}

GrayImage render_letter(const LetterInstance& inst, const CabcParams& p) {
  const double k = p.length_scale();
  GrayImage base = render_glyph(inst.glyph, inst.style, p.image_size, p.glyph_height * k, p.stroke_width * k);
  return affine_transform(base, inst.scale_letter * inst.scale_common, inst.phi_letter + inst.phi_common,
                          inst.shear_letter + inst.shear_common, inst.axis);
}

Point2 WarpTemplate::gradient(double x, double y) const {
  double gx = 0, gy = 0;
  const double inv = 1.0 / (sigma * sigma);
  for (const auto& [mx, my] : centers) {
    const double dx = x - mx, dy = y - my;
    const double e = std::exp(-(dx * dx + dy * dy) * 0.5 * inv);
    gx -= dx * inv * e;
    gy -= dy * inv * e;
  }
  return {gx, gy};
}

WarpTemplate sample_warp_template(std::size_t size, std::size_t count, double sigma, Rng& rng) {
  WarpTemplate t;
  t.sigma = sigma;
  for (std::size_t k = 0; k < count; ++k) {
    const double x = uniform(rng, 0, double(size));
    const double y = uniform(rng, 0, double(size));
    t.centers.emplace_back(x, y);
  }
  return t;
}

GrayImage warp(const GrayImage& src, const WarpTemplate& tmpl, double gain) {
  if (gain == 0) return src;
  GrayImage out(src.width, src.height);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      const double px = double(x) + 0.5, py = double(y) + 0.5;
      const auto [gx, gy] = tmpl.gradient(px, py);
      if (sample_bilinear(src, px - gain * gx, py - gain * gy) >= 0.5) out.at(x, y) = 255;
    }
  return out;
}

double mean_displacement(const WarpTemplate& tmpl, std::size_t size, double gain) {
  double total = 0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const auto [gx, gy] = tmpl.gradient(double(x) + 0.5, double(y) + 0.5);
      total += std::hypot(gx, gy);
    }
  return std::abs(gain) * total / double(size * size);
}

double calibrate_warp_gain(std::size_t size, std::size_t count, double sigma, double target) {
  if (target == 0) return 0;
  constexpr int kTemplates = 256;
  Rng rng(0x9e3779b97f4a7c15ULL);
  double unit = 0;
  for (int k = 0; k < kTemplates; ++k) unit += mean_displacement(sample_warp_template(size, count, sigma, rng), size, 1.0);
  unit /= kTemplates;
  require(unit > 0, "calibrate_warp_gain: degenerate template");
  return target / unit;
}

double effective_warp_gain(const CabcParams& p) {
  if (p.warp_gain > 0) return p.warp_gain;
  const double k = p.length_scale();
  static std::mutex mu;
  static std::map<std::tuple<std::size_t, std::size_t, double, double>, double> cache;
  const auto key = std::make_tuple(p.image_size, p.warp_gaussians, p.warp_sigma * k, p.warp_mean_displacement * k);
  std::lock_guard lock(mu);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, calibrate_warp_gain(p.image_size, p.warp_gaussians, p.warp_sigma * k,
                                                p.warp_mean_displacement * k)).first;
  return it->second;
}

GrayImage pixelate_cells(const GrayImage& src, const PixelateOptions& opt) {
  require(opt.cell > 0, "pixelate: cell size must be positive");
  GrayImage out(src.width, src.height);
  const std::size_t cell = std::size_t(opt.cell);
  for (std::size_t y0 = 0; y0 < src.height; y0 += cell)
    for (std::size_t x0 = 0; x0 < src.width; x0 += cell) {
      const std::size_t y1 = std::min(src.height, y0 + cell), x1 = std::min(src.width, x0 + cell);
      std::size_t white = 0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) white += src.at(x, y) ? 1 : 0;
      if (double(white) > opt.threshold * double((y1 - y0) * (x1 - x0)))
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) out.at(x, y) = 255;
    }
  return out;
}

GrayImage pixelate(const GrayImage& src, Rng& rng, const PixelateOptions& opt,
                   std::vector<std::pair<int, int>>* offsets) {
  const GrayImage cells = pixelate_cells(src, opt);
  auto jitter = [&] {
    if (opt.jitter_sd == 0) return 0;
    double d;
    do d = normal(rng, 0, opt.jitter_sd);
    while (std::abs(d) > opt.jitter_cap);
    return int(std::lround(d));
  };
  GrayImage out(src.width, src.height);
  const std::size_t cell = std::size_t(opt.cell);
  for (std::size_t y0 = 0; y0 < src.height; y0 += cell)
    for (std::size_t x0 = 0; x0 < src.width; x0 += cell) {
      if (!cells.at(x0, y0)) continue;
      const int dx = jitter(), dy = jitter();
      if (offsets) offsets->emplace_back(dx, dy);
      const std::size_t y1 = std::min(src.height, y0 + cell), x1 = std::min(src.width, x0 + cell);
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
          const long tx = long(x) + dx, ty = long(y) + dy;
          if (out.contains(tx, ty)) out.at(std::size_t(tx), std::size_t(ty)) = 255;
        }
    }
  return out;
}

std::optional<Placement> place_letters(const GrayImage& a, const GrayImage& b, double r, double theta_deg,
                                       double dtheta_deg, std::uint8_t intensity_a, std::uint8_t intensity_b) {
  require(a.width == b.width && a.height == b.height, "place_letters: size mismatch");
  const std::size_t w = a.width, h = a.height;
  Placement out;
  out.composite = GrayImage(w, h);
  const std::array<const GrayImage*, 2> src{&a, &b};
  const std::array<double, 2> angle{theta_deg, theta_deg + dtheta_deg};
  const std::array<std::uint8_t, 2> level{intensity_a, intensity_b};
  for (int k = 0; k < 2; ++k) {
    const auto [mx, my] = center_of_mass(*src[std::size_t(k)]);
    const double tx = double(w) / 2 + r * std::cos(angle[std::size_t(k)] * kDeg);
    const double ty = double(h) / 2 - r * std::sin(angle[std::size_t(k)] * kDeg);
    out.targets[std::size_t(k)] = {tx, ty};
    const long sx = std::lround(tx - mx), sy = std::lround(ty - my);
    GrayImage mask(w, h);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (!src[std::size_t(k)]->at(x, y)) continue;
        const long nx = long(x) + sx, ny = long(y) + sy;
        if (!mask.contains(nx, ny)) return std::nullopt;
        mask.at(std::size_t(nx), std::size_t(ny)) = 255;
      }
    for (std::size_t i = 0; i < mask.pixels.size(); ++i)
      if (mask.pixels[i]) out.composite.pixels[i] = std::max(out.composite.pixels[i], level[std::size_t(k)]);
    out.masks[std::size_t(k)] = std::move(mask);
  }
  return out;
}

namespace {

/// Pixels where a marker centred there satisfies the fit and exclusivity rules.
std::vector<std::pair<long, long>> marker_candidates(const GrayImage& own, const GrayImage& other, int radius) {
  const GrayImage grown = dilate8(own, 1);
  std::vector<std::pair<long, long>> out;
  for (long y = 0; y < long(own.height); ++y)
    for (long x = 0; x < long(own.width); ++x) {
      if (!own.at(std::size_t(x), std::size_t(y))) continue;
      bool ok = true;
      for (long dy = -radius; dy <= radius && ok; ++dy)
        for (long dx = -radius; dx <= radius && ok; ++dx) {
          if (dx * dx + dy * dy > long(radius) * radius) continue;
          ok = grown.get(x + dx, y + dy) && !other.get(x + dx, y + dy);
        }
      if (ok) out.emplace_back(x, y);
    }
  return out;
}

}  // namespace

std::optional<std::vector<Marker>> place_markers(const std::array<GrayImage, 2>& masks, int label,
                                                 bool segmentation, Rng& rng, int radius, double separation) {
  require(count_foreground(masks[0]) > 0 && count_foreground(masks[1]) > 0, "place_markers: empty mask");
  std::array<std::vector<std::pair<long, long>>, 2> cand{marker_candidates(masks[0], masks[1], radius),
                                                         marker_candidates(masks[1], masks[0], radius)};
  auto pick = [&](int obj) -> std::optional<Marker> {
    const auto& c = cand[std::size_t(obj)];
    if (c.empty()) return std::nullopt;
    const auto& [x, y] = c[std::size_t(rng() % c.size())];
    return Marker{x, y, radius, obj};
  };
  if (segmentation) {
    const int obj = int(rng() & 1);
    auto m = pick(obj);
    if (!m) return std::nullopt;
    return std::vector<Marker>{*m};
  }
  if (label == kLabelSame) {
    const int obj = int(rng() & 1);
    auto first = pick(obj);
    if (!first) return std::nullopt;
    std::vector<std::pair<long, long>> far;
    for (const auto& [x, y] : cand[std::size_t(obj)])
      if (std::hypot(double(x - first->x), double(y - first->y)) >= separation) far.emplace_back(x, y);
    if (far.empty()) return std::nullopt;
    const auto& [x, y] = far[std::size_t(rng() % far.size())];
    return std::vector<Marker>{*first, Marker{x, y, radius, obj}};
  }
  auto m0 = pick(0);
  auto m1 = pick(1);
  if (!m0 || !m1) return std::nullopt;
  if (std::hypot(double(m0->x - m1->x), double(m0->y - m1->y)) < separation) return std::nullopt;
  return std::vector<Marker>{*m0, *m1};
}

bool luminance_pair_valid(int a, int b) { return a > 128 && b > 128 && a <= 255 && b <= 255 && std::abs(a - b) >= 40; }

std::pair<int, int> sample_luminance_pair(Rng& rng) {
  for (;;) {
    const int a = 129 + int(rng() % 127), b = 129 + int(rng() % 127);
    if (luminance_pair_valid(a, b)) return {a, b};
  }
}

bool masks_separated(const GrayImage& a, const GrayImage& b) { return !any_overlap(dilate8(a, 1), b); }

StimulusSample generate_cabc_sample(const CabcParams& p, std::uint64_t index) {
  Rng rng = make_rng(p.seed, index);
  const bool seg = p.task == Task::segmentation;
  const int label = seg ? kLabelDifferent : (index % 2 == 1 ? kLabelSame : kLabelDifferent);
  const double gain = effective_warp_gain(p);
  const double k = p.length_scale();
  const PixelateOptions pix;

  for (int attempt = 1; attempt <= kSampleAttempts; ++attempt) {
    TransformParams tp = sample_transform_params(p.difficulty, rng);
    const int style = int(rng() % kGlyphStyles);
    const int g1 = int(rng() % kGlyphCount);
    int g2 = int(rng() % (kGlyphCount - 1));
    if (g2 >= g1) ++g2;
    const ShearAxis axis = (rng() & 1) ? ShearAxis::vertical : ShearAxis::horizontal;

    std::array<GrayImage, 2> letters;
    bool ok = true;
    for (int i = 0; i < 2 && ok; ++i) {
      LetterInstance inst;
      inst.glyph = i == 0 ? g1 : g2;
      inst.style = style;
      inst.phi_letter = i == 0 ? tp.phi1 : tp.phi2;
      inst.scale_letter = i == 0 ? tp.s1 : tp.s2;
      inst.shear_letter = i == 0 ? tp.e1 : tp.e2;
      inst.phi_common = tp.phic;
      inst.scale_common = tp.sc;
      inst.shear_common = tp.ec;
      inst.axis = axis;
      inst.warp_seed = rng();
      inst.pixel_seed = rng();
      GrayImage img = render_letter(inst, p);
      Rng warp_rng(inst.warp_seed);
      img = warp(img, sample_warp_template(p.image_size, p.warp_gaussians, p.warp_sigma * k, warp_rng), gain);
      Rng pixel_rng(inst.pixel_seed);
      img = pixelate(img, pixel_rng, pix);
      ok = count_foreground(img) > 0 && !touches_border(img);
      letters[std::size_t(i)] = std::move(img);
    }
    if (!ok) continue;

    int i1 = 255, i2 = 255;
    if (p.control == Control::luminance) std::tie(i1, i2) = sample_luminance_pair(rng);

    std::optional<Placement> placed;
    for (int pa = 0; pa < kPositionAttempts; ++pa) {
      if (pa > 0) resample_positions(tp, p.difficulty, rng);
      placed = place_letters(letters[0], letters[1], tp.r * k, tp.theta, tp.dtheta, std::uint8_t(i1), std::uint8_t(i2));
      if (placed && p.control == Control::positional && !masks_separated(placed->masks[0], placed->masks[1]))
        placed.reset();
      if (placed) break;
    }
    if (!placed) continue;

    auto markers = place_markers(placed->masks, label, seg, rng, p.marker_radius, p.marker_separation);
    if (!markers) continue;

    StimulusSample s;
    s.label = label;
    s.image = placed->composite;
    for (const auto& m : *markers) draw_disc(s.image, m.x, m.y, m.radius, 255);
    s.masks = {placed->masks[0], placed->masks[1]};
    s.markers = *markers;
    if (seg) s.target = s.masks[std::size_t(s.markers[0].object)];

    auto& md = s.metadata;
    md.set("difficulty", difficulty_name(p.difficulty));
    md.set("control", control_name(p.control));
    md.set("style", double(style));
    md.set("glyph1", std::string(1, char('A' + g1)));
    md.set("glyph2", std::string(1, char('A' + g2)));
    md.set("shear_axis", axis == ShearAxis::horizontal ? "horizontal" : "vertical");
    md.set("phi1", tp.phi1);
    md.set("phi2", tp.phi2);
    md.set("phic", tp.phic);
    md.set("s1", tp.s1);
    md.set("s2", tp.s2);
    md.set("sc", tp.sc);
    md.set("e1", tp.e1);
    md.set("e2", tp.e2);
    md.set("ec", tp.ec);
    md.set("theta", tp.theta);
    md.set("dtheta", tp.dtheta);
    md.set("r", tp.r);
    md.set("intensity1", double(i1));
    md.set("intensity2", double(i2));
    md.set("warp_gain", gain);
    md.set("attempts", double(attempt));
    return s;
  }
  throw std::runtime_error("cABC image " + std::to_string(index) + ": no valid sample after " +
                           std::to_string(kSampleAttempts) + " attempts");
}

std::vector<std::string> audit_cabc_sample(const StimulusSample& s, const CabcParams& p) {
  auto v = audit_common(s);
  if (!v.empty()) return v;
  if (s.masks.size() != 2) return {"expected two letter masks"};
  const std::size_t w = s.image.width, h = s.image.height;
  if (w != p.image_size || h != p.image_size) v.push_back("image size differs from parameters");
  GrayImage discs(w, h);
  for (std::size_t i = 0; i < s.markers.size(); ++i) {
    const auto& m = s.markers[i];
    const GrayImage disc = marker_mask(m, w, h);
    const GrayImage grown = dilate8(s.masks[std::size_t(m.object)], 1);
    const GrayImage& other = s.masks[std::size_t(1 - m.object)];
    for (std::size_t q = 0; q < disc.pixels.size(); ++q) {
      if (!disc.pixels[q]) continue;
      discs.pixels[q] = 255;
      if (!grown.pixels[q]) {
        v.push_back("marker " + std::to_string(i) + " exceeds its dilated mask");
        break;
      }
      if (other.pixels[q]) {
        v.push_back("marker " + std::to_string(i) + " touches the other letter");
        break;
      }
    }
  }
  if (s.markers.size() == 2 &&
      std::hypot(double(s.markers[0].x - s.markers[1].x), double(s.markers[0].y - s.markers[1].y)) <
          p.marker_separation)
    v.push_back("markers closer than the minimum separation");
  const auto num = [&](const char* key, double fallback) {
    auto it = s.metadata.numbers.find(key);
    return it == s.metadata.numbers.end() ? fallback : it->second;
  };
  const int i1 = int(num("intensity1", 255)), i2 = int(num("intensity2", 255));
  if (p.control == Control::luminance) {
    if (!luminance_pair_valid(i1, i2)) v.push_back("luminance pair violates the control constraint");
  } else if (i1 != 255 || i2 != 255) {
    v.push_back("letter intensity differs from 255");
  }
  if (p.control == Control::positional && !masks_separated(s.masks[0], s.masks[1]))
    v.push_back("letters touch or overlap");
  for (std::size_t q = 0; q < s.image.pixels.size(); ++q) {
    const int expect = discs.pixels[q] ? 255
                                       : std::max(s.masks[0].pixels[q] ? i1 : 0, s.masks[1].pixels[q] ? i2 : 0);
    if (s.image.pixels[q] != expect) {
      v.push_back("image is not the composition of letters and markers");
      break;
    }
  }
  return v;
}

DatasetSummary generate_cabc_dataset(const std::filesystem::path& dir, const CabcParams& p) {
  p.validate();
  KeyValueConfig kv;
  kv.set("challenge", "cabc");
  p.write(kv);
  kv.set("cabc.warp_gain_effective", format_double(effective_warp_gain(p)));
  return write_dataset(
      dir, kv, p.layout(), [&](std::uint64_t i) { return generate_cabc_sample(p, i); },
      [&](const StimulusSample& s) { return audit_cabc_sample(s, p); });
}

}  // namespace pgroup
