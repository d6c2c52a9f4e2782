#pragma once

#include <optional>
#include <string>

#include "pgroup/architecture.hpp"
#include "pgroup/dataset.hpp"
#include "pgroup/glyphs.hpp"
#include "pgroup/rng.hpp"

namespace pgroup {

/// Dash geometry and distractor count are given for a 128 px image; lengths
/// scale with image_size / 128 and the distractor count with the area.
struct PathfinderParams {
  std::size_t path_length = 14;  ///< dashes per target curve: 6, 9 or 14
  std::size_t distractor_dashes = 12;
  std::size_t distractor_chain = 3;
  double dash_length = 9;
  double dash_width = 2;
  double dash_gap = 4;
  double curvature_cap = 30;  ///< max heading change between dashes [deg]
  Task task = Task::classification;
  std::size_t image_size = 128;
  int marker_radius = 3;
  std::uint64_t seed = 0;
  std::size_t count = 0;      ///< 0: 60000 (classification) or 40400 (segmentation)
  std::size_t val_count = 0;  ///< 0: 10% of count (classification) or 400 (segmentation)
  unsigned workers = 1;

  void validate() const;
  double length_scale() const { return double(image_size) / 128.0; }
  double scaled_length() const { return dash_length * length_scale(); }
  double scaled_width() const { return std::max(1.0, dash_width * length_scale()); }
  double scaled_gap() const { return dash_gap * length_scale(); }
  std::size_t scaled_distractors() const;
  /// Minimum distance of any dash end from the image border.
  double margin() const { return double(marker_radius) + scaled_width() + 1; }
  DatasetLayout layout() const;
  void write(KeyValueConfig& kv, const std::string& prefix = "pathfinder.") const;
  static PathfinderParams read(const KeyValueConfig& kv, const std::string& prefix = "pathfinder.");
};

struct Dash {
  Point2 a, b;  ///< start and end along the curve

  Point2 center() const { return {(a.first + b.first) / 2, (a.second + b.second) / 2}; }
  double orientation_deg() const;
};

struct CurveSpec {
  std::vector<Dash> dashes;

  Point2 start() const { return dashes.front().a; }
  Point2 end() const { return dashes.back().b; }
  /// Along-curve distance between the two endpoints (dashes plus gaps).
  double geodesic_length() const;
};

/// Shortest distance between segments p0-p1 and q0-q1.
double segment_distance(Point2 p0, Point2 p1, Point2 q0, Point2 q1);
/// Shortest distance between any dash of a and any dash of b.
double curve_distance(const CurveSpec& a, const CurveSpec& b);

/// One random-walk attempt; nullopt on border exit or self-approach closer
/// than the gap between non-adjacent dashes.
std::optional<CurveSpec> try_grow_path(std::size_t length, const PathfinderParams& p, Rng& rng);
/// Retries try_grow_path; throws after the attempt budget.
CurveSpec grow_path(std::size_t length, const PathfinderParams& p, Rng& rng, std::size_t* attempts = nullptr);

GrayImage render_curve(const CurveSpec& c, std::size_t size, double width);

/// Deterministic sample for (params.seed, index). Masks hold the two target
/// curves; distractor chains are drawn into the image only.
StimulusSample generate_pathfinder_sample(const PathfinderParams& p, std::uint64_t index);

/// audit_common plus: markers on curve pixels, image contains both curves,
/// curves do not touch each other, same-label markers at opposite ends.
std::vector<std::string> audit_pathfinder_sample(const StimulusSample& s, const PathfinderParams& p);

DatasetSummary generate_pathfinder_dataset(const std::filesystem::path& dir, const PathfinderParams& p);

}  // namespace pgroup
