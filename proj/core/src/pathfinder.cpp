#include "pgroup/pathfinder.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <cmath>
#include <numbers>

namespace pgroup {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr std::size_t kGrowAttempts = 1000;
constexpr int kStepAttempts = 8;
constexpr std::size_t kProposalsPerDash = 100;
constexpr int kSampleAttempts = 200;
constexpr int kPlacementAttempts = 50;

double dot(Point2 a, Point2 b) { return a.first * b.first + a.second * b.second; }
Point2 sub(Point2 a, Point2 b) { return {a.first - b.first, a.second - b.second}; }

double point_segment_distance(Point2 p, Point2 a, Point2 b) {
  const Point2 ab = sub(b, a), ap = sub(p, a);
  const double len2 = dot(ab, ab);
  const double t = len2 > 0 ? std::clamp(dot(ap, ab) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(ap.first - t * ab.first, ap.second - t * ab.second);
}

double cross(Point2 a, Point2 b) { return a.first * b.second - a.second * b.first; }

bool segments_cross(Point2 p0, Point2 p1, Point2 q0, Point2 q1) {
  const Point2 r = sub(p1, p0), s = sub(q1, q0);
  const double d1 = cross(r, sub(q0, p0)), d2 = cross(r, sub(q1, p0));
  const double d3 = cross(s, sub(p0, q0)), d4 = cross(s, sub(p1, q0));
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0;
}

bool inside(Point2 p, double lo, double hi) {
  return p.first >= lo && p.first <= hi && p.second >= lo && p.second <= hi;
}

/// Curve pixel closest to an endpoint.
std::pair<long, long> endpoint_pixel(const GrayImage& mask, Point2 end) {
  long best_x = -1, best_y = -1;
  double best = 1e300;
  const long cx = long(std::floor(end.first)), cy = long(std::floor(end.second));
  for (long y = cy - 4; y <= cy + 4; ++y)
    for (long x = cx - 4; x <= cx + 4; ++x) {
      if (!mask.get(x, y)) continue;
      const double d = std::hypot(double(x) + 0.5 - end.first, double(y) + 0.5 - end.second);
      if (d < best) {
        best = d;
        best_x = x;
        best_y = y;
      }
    }
  require(best_x >= 0, "endpoint_pixel: curve end not rendered");
  return {best_x, best_y};
}

}  // namespace

void PathfinderParams::validate() const {
  require(path_length >= 1, "pathfinder.path_length must be positive");
  require(distractor_chain >= 1, "pathfinder.distractor_chain must be positive");
  require(dash_length > 0 && dash_width > 0 && dash_gap > 0, "pathfinder dash geometry must be positive");
  require(curvature_cap >= 0 && curvature_cap < 90, "pathfinder.curvature_cap must lie in [0, 90)");
  require(image_size >= 32 && image_size % 4 == 0, "pathfinder.image_size must be a multiple of 4 and at least 32");
  require(marker_radius >= 1, "pathfinder.marker_radius must be positive");
  const auto l = layout();
  require(l.train_count + l.val_count > 0, "pathfinder.count must be positive");
}

std::size_t PathfinderParams::scaled_distractors() const {
  return std::size_t(std::llround(double(distractor_dashes) * length_scale() * length_scale()));
}

DatasetLayout PathfinderParams::layout() const {
  DatasetLayout l;
  const bool seg = task == Task::segmentation;
  const std::size_t total = count ? count : (seg ? 40400 : 60000);
  if (val_count) {
    require(val_count < total, "pathfinder.val_count must be smaller than pathfinder.count");
    l.val_count = val_count;
    l.train_count = total - val_count;
  } else if (seg && !count) {
    l.val_count = 400;
    l.train_count = 40000;
  } else {
    l = split_counts(total, 0.1);
  }
  l.workers = workers;
  return l;
}

void PathfinderParams::write(KeyValueConfig& kv, const std::string& prefix) const {
  kv.set(prefix + "path_length", std::to_string(path_length));
  kv.set(prefix + "distractor_dashes", std::to_string(distractor_dashes));
  kv.set(prefix + "distractor_chain", std::to_string(distractor_chain));
  kv.set(prefix + "dash_length", format_double(dash_length));
  kv.set(prefix + "dash_width", format_double(dash_width));
  kv.set(prefix + "dash_gap", format_double(dash_gap));
  kv.set(prefix + "curvature_cap", format_double(curvature_cap));
  kv.set(prefix + "task", task_name(task));
  kv.set(prefix + "image_size", std::to_string(image_size));
  kv.set(prefix + "marker_radius", std::to_string(marker_radius));
  kv.set(prefix + "seed", std::to_string(seed));
  kv.set(prefix + "count", std::to_string(count));
  kv.set(prefix + "val_count", std::to_string(val_count));
}

PathfinderParams PathfinderParams::read(const KeyValueConfig& kv, const std::string& prefix) {
  PathfinderParams p;
  p.path_length = kv.get_size(prefix + "path_length", p.path_length);
  p.distractor_dashes = kv.get_size(prefix + "distractor_dashes", p.distractor_dashes);
  p.distractor_chain = kv.get_size(prefix + "distractor_chain", p.distractor_chain);
  p.dash_length = kv.get_or(prefix + "dash_length", p.dash_length);
  p.dash_width = kv.get_or(prefix + "dash_width", p.dash_width);
  p.dash_gap = kv.get_or(prefix + "dash_gap", p.dash_gap);
  p.curvature_cap = kv.get_or(prefix + "curvature_cap", p.curvature_cap);
  p.task = parse_task(kv.get_or(prefix + "task", task_name(p.task)));
  p.image_size = kv.get_size(prefix + "image_size", p.image_size);
  p.marker_radius = int(kv.get_or(prefix + "marker_radius", std::int64_t(p.marker_radius)));
  p.seed = kv.get_or(prefix + "seed", p.seed);
  p.count = kv.get_size(prefix + "count", p.count);
  p.val_count = kv.get_size(prefix + "val_count", p.val_count);
  p.validate();
  return p;
}

double Dash::orientation_deg() const { return std::atan2(b.second - a.second, b.first - a.first) / kDeg; }

double CurveSpec::geodesic_length() const {
  double total = 0;
  for (std::size_t i = 0; i < dashes.size(); ++i) {
    total += std::hypot(dashes[i].b.first - dashes[i].a.first, dashes[i].b.second - dashes[i].a.second);
    if (i > 0)
      total += std::hypot(dashes[i].a.first - dashes[i - 1].b.first, dashes[i].a.second - dashes[i - 1].b.second);
  }
  return total;
}

double segment_distance(Point2 p0, Point2 p1, Point2 q0, Point2 q1) {
  if (segments_cross(p0, p1, q0, q1)) return 0;
  return std::min({point_segment_distance(p0, q0, q1), point_segment_distance(p1, q0, q1),
                   point_segment_distance(q0, p0, p1), point_segment_distance(q1, p0, p1)});
}

double curve_distance(const CurveSpec& a, const CurveSpec& b) {
  double best = 1e300;
  for (const auto& da : a.dashes)
    for (const auto& db : b.dashes) best = std::min(best, segment_distance(da.a, da.b, db.a, db.b));
  return best;
}

std::optional<CurveSpec> try_grow_path(std::size_t length, const PathfinderParams& p, Rng& rng) {
  const double s = double(p.image_size), m = p.margin();
  const double len = p.scaled_length(), gap = p.scaled_gap();
  std::deque<Dash> dashes;
  // Proposals are checked against every dash except the one they attach to.
  auto valid = [&](const Dash& d, bool at_front) {
    if (!inside(d.a, m, s - m) || !inside(d.b, m, s - m)) return false;
    for (std::size_t j = 0; j < dashes.size(); ++j) {
      if (j == (at_front ? 0 : dashes.size() - 1)) continue;
      if (segment_distance(d.a, d.b, dashes[j].a, dashes[j].b) < gap) return false;
    }
    return true;
  };
  auto turn = [&] { return p.curvature_cap > 0 ? uniform(rng, -p.curvature_cap, p.curvature_cap) : 0.0; };

  const Point2 origin{uniform(rng, m, s - m), uniform(rng, m, s - m)};
  for (int k = 0; dashes.empty(); ++k) {
    if (k == kStepAttempts) return std::nullopt;
    const double h = uniform(rng, -180, 180);
    const Dash d{origin, {origin.first + len * std::cos(h * kDeg), origin.second + len * std::sin(h * kDeg)}};
    if (valid(d, false)) dashes.push_back(d);
  }
  // Grow at either end; an end retires after kStepAttempts consecutive
  // failures, and when both have retired a dash is withdrawn from one end.
  std::array<int, 2> failures{0, 0};
  std::size_t budget = kProposalsPerDash * length;
  while (dashes.size() < length) {
    if (budget-- == 0) return std::nullopt;
    const bool front_open = failures[0] < kStepAttempts, back_open = failures[1] < kStepAttempts;
    if (!front_open && !back_open) {
      if (dashes.size() == 1) return std::nullopt;
      if (rng() & 1) dashes.pop_front();
      else dashes.pop_back();
      failures = {0, 0};
      continue;
    }
    const bool at_front = front_open && (!back_open || (rng() & 1));
    if (at_front) {
      const Dash& first = dashes.front();
      const double h = first.orientation_deg() + turn();
      const Point2 b{first.a.first - gap * std::cos(h * kDeg), first.a.second - gap * std::sin(h * kDeg)};
      const Dash d{{b.first - len * std::cos(h * kDeg), b.second - len * std::sin(h * kDeg)}, b};
      if (valid(d, true)) {
        dashes.push_front(d);
        failures[0] = 0;
      } else {
        ++failures[0];
      }
    } else {
      const Dash& last = dashes.back();
      const double h = last.orientation_deg() + turn();
      const Point2 a{last.b.first + gap * std::cos(h * kDeg), last.b.second + gap * std::sin(h * kDeg)};
      const Dash d{a, {a.first + len * std::cos(h * kDeg), a.second + len * std::sin(h * kDeg)}};
      if (valid(d, false)) {
        dashes.push_back(d);
        failures[1] = 0;
      } else {
        ++failures[1];
      }
    }
  }
  return CurveSpec{{dashes.begin(), dashes.end()}};
}

CurveSpec grow_path(std::size_t length, const PathfinderParams& p, Rng& rng, std::size_t* attempts) {
  for (std::size_t k = 1; k <= kGrowAttempts; ++k)
    if (auto c = try_grow_path(length, p, rng)) {
      if (attempts) *attempts = k;
      return *c;
    }
  throw std::runtime_error("grow_path: no valid path of length " + std::to_string(length) + " after " +
                           std::to_string(kGrowAttempts) + " attempts");
}

GrayImage render_curve(const CurveSpec& c, std::size_t size, double width) {
  GrayImage img(size, size);
  for (const auto& d : c.dashes) draw_capsule(img, d.a, d.b, width);
  return img;
}

StimulusSample generate_pathfinder_sample(const PathfinderParams& p, std::uint64_t index) {
  Rng rng = make_rng(p.seed, index);
  const bool seg = p.task == Task::segmentation;
  const int label = seg ? kLabelDifferent : (index % 2 == 1 ? kLabelSame : kLabelDifferent);
  const double gap = p.scaled_gap(), width = p.scaled_width();
  const std::size_t S = p.image_size;

  for (int attempt = 1; attempt <= kSampleAttempts; ++attempt) {
    std::vector<CurveSpec> curves{grow_path(p.path_length, p, rng)};
    auto fits = [&](const CurveSpec& c) {
      for (const auto& other : curves)
        if (curve_distance(c, other) < gap) return false;
      return true;
    };
    auto add = [&](std::size_t length) {
      for (int k = 0; k < kPlacementAttempts; ++k) {
        CurveSpec c = grow_path(length, p, rng);
        if (fits(c)) {
          curves.push_back(std::move(c));
          return true;
        }
      }
      return false;
    };
    if (!add(p.path_length)) continue;
    bool ok = true;
    for (std::size_t left = p.scaled_distractors(); left > 0 && ok;) {
      const std::size_t n = std::min(left, p.distractor_chain);
      ok = add(n);
      left -= n;
    }
    if (!ok) continue;

    StimulusSample s;
    s.label = label;
    s.image = GrayImage(S, S);
    for (const auto& c : curves)
      for (const auto& d : c.dashes) draw_capsule(s.image, d.a, d.b, width);
    s.masks = {render_curve(curves[0], S, width), render_curve(curves[1], S, width)};

    auto marker_at = [&](int obj, bool at_end) {
      const CurveSpec& c = curves[std::size_t(obj)];
      const auto [x, y] = endpoint_pixel(s.masks[std::size_t(obj)], at_end ? c.end() : c.start());
      return Marker{x, y, p.marker_radius, obj};
    };
    if (seg) {
      const int obj = int(rng() & 1);
      s.markers = {marker_at(obj, (rng() & 1) != 0)};
      s.target = s.masks[std::size_t(obj)];
    } else if (label == kLabelSame) {
      const int obj = int(rng() & 1);
      s.markers = {marker_at(obj, false), marker_at(obj, true)};
    } else {
      s.markers = {marker_at(0, (rng() & 1) != 0), marker_at(1, (rng() & 1) != 0)};
    }
    for (const auto& m : s.markers) draw_disc(s.image, m.x, m.y, m.radius, 255);

    auto& md = s.metadata;
    md.set("path_length", double(p.path_length));
    md.set("distractor_dashes", double(p.scaled_distractors()));
    md.set("curve_gap", curve_distance(curves[0], curves[1]));
    md.set("geodesic_length", curves[0].geodesic_length());
    for (int k = 0; k < 2; ++k) {
      const std::string pre = "curve" + std::to_string(k) + "_";
      md.set(pre + "start_x", curves[std::size_t(k)].start().first);
      md.set(pre + "start_y", curves[std::size_t(k)].start().second);
      md.set(pre + "end_x", curves[std::size_t(k)].end().first);
      md.set(pre + "end_y", curves[std::size_t(k)].end().second);
    }
    if (!seg && label == kLabelSame) md.set("marker_geodesic", curves[std::size_t(s.markers[0].object)].geodesic_length());
    md.set("attempts", double(attempt));
    return s;
  }
  throw std::runtime_error("Pathfinder image " + std::to_string(index) + ": no valid sample after " +
                           std::to_string(kSampleAttempts) + " attempts");
}

std::vector<std::string> audit_pathfinder_sample(const StimulusSample& s, const PathfinderParams& p) {
  auto v = audit_common(s);
  if (!v.empty()) return v;
  if (s.masks.size() != 2) return {"expected two curve masks"};
  if (s.image.width != p.image_size) v.push_back("image size differs from parameters");
  for (int k = 0; k < 2; ++k)
    for (std::size_t q = 0; q < s.image.pixels.size(); ++q)
      if (s.masks[std::size_t(k)].pixels[q] && s.image.pixels[q] != 255) {
        v.push_back("curve " + std::to_string(k) + " missing from image");
        break;
      }
  if (any_overlap(s.masks[0], s.masks[1])) v.push_back("target curves intersect");
  const auto num = [&](const std::string& key) {
    auto it = s.metadata.numbers.find(key);
    return it == s.metadata.numbers.end() ? std::nan("") : it->second;
  };
  for (std::size_t i = 0; i < s.markers.size(); ++i) {
    const auto& m = s.markers[i];
    const std::string pre = "curve" + std::to_string(m.object) + "_";
    const double mx = double(m.x) + 0.5, my = double(m.y) + 0.5;
    const double ds = std::hypot(mx - num(pre + "start_x"), my - num(pre + "start_y"));
    const double de = std::hypot(mx - num(pre + "end_x"), my - num(pre + "end_y"));
    if (!(std::min(ds, de) <= p.scaled_width() + 1.5)) v.push_back("marker " + std::to_string(i) + " not at a curve end");
  }
  if (!s.segmentation() && s.label == kLabelSame && s.markers.size() == 2 && s.markers[0] == s.markers[1])
    v.push_back("same-label markers coincide");
  return v;
}

DatasetSummary generate_pathfinder_dataset(const std::filesystem::path& dir, const PathfinderParams& p) {
  p.validate();
  KeyValueConfig kv;
  kv.set("challenge", "pathfinder");
  p.write(kv);
  return write_dataset(
      dir, kv, p.layout(), [&](std::uint64_t i) { return generate_pathfinder_sample(p, i); },
      [&](const StimulusSample& s) { return audit_pathfinder_sample(s, p); });
}

}  // namespace pgroup
