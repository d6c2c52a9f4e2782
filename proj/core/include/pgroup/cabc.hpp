#pragma once

#include <array>
#include <optional>
#include <string>

#include "pgroup/architecture.hpp"
#include "pgroup/dataset.hpp"
#include "pgroup/glyphs.hpp"
#include "pgroup/rng.hpp"

namespace pgroup {

enum class Difficulty { easy, intermediate, hard };
enum class Control { none, luminance, positional };
enum class ShearAxis { horizontal, vertical };

std::string difficulty_name(Difficulty d);
Difficulty parse_difficulty(const std::string& s);
std::string control_name(Control c);
Control parse_control(const std::string& s);

/// Lengths in pixels are given for a 128 px image and scale with image_size / 128.
/// The pixelation grid, marker radius and marker separation are absolute.
struct CabcParams {
  Difficulty difficulty = Difficulty::hard;
  Control control = Control::none;
  Task task = Task::classification;
  std::size_t image_size = 128;
  int marker_radius = 3;
  double marker_separation = 10;
  double glyph_height = 60;
  double stroke_width = 6;
  double warp_sigma = 20;
  std::size_t warp_gaussians = 10;
  double warp_mean_displacement = 2;  ///< calibration target for the warp gain
  double warp_gain = 0;               ///< 0: calibrate from warp_mean_displacement
  std::uint64_t seed = 0;
  std::size_t count = 0;      ///< 0: 45000 (classification) or 10400 (segmentation)
  std::size_t val_count = 0;  ///< 0: 10% of count (classification) or 400 (segmentation)
  unsigned workers = 1;

  void validate() const;
  double length_scale() const { return double(image_size) / 128.0; }
  DatasetLayout layout() const;
  void write(KeyValueConfig& kv, const std::string& prefix = "cabc.") const;
  static CabcParams read(const KeyValueConfig& kv, const std::string& prefix = "cabc.");
};

/// Letterwise (1, 2) and common (c) rotation [deg], scale and shear, and the
/// polar placement (theta, signed dtheta [deg], r [px at 128]).
struct TransformParams {
  double phi1 = 0, phi2 = 0, phic = 0;
  double s1 = 1, s2 = 1, sc = 1;
  double e1 = 0, e2 = 0, ec = 0;
  double theta = 0, dtheta = 180, r = 25;
};

TransformParams sample_transform_params(Difficulty d, Rng& rng);
/// Redraws only theta, dtheta and r.
void resample_positions(TransformParams& tp, Difficulty d, Rng& rng);

struct LetterInstance {
  int glyph = 0;
  int style = 0;
  double phi_letter = 0, scale_letter = 1, shear_letter = 0;
  double phi_common = 0, scale_common = 1, shear_common = 0;
  ShearAxis axis = ShearAxis::horizontal;
  std::uint64_t warp_seed = 0;
  std::uint64_t pixel_seed = 0;
};

/// Scale, then rotate (counter-clockwise on screen), then shear about the
/// canvas centre; inverse-mapped with bilinear sampling and binarised at 0.5.
GrayImage affine_transform(const GrayImage& src, double scale, double rotation_deg, double shear, ShearAxis axis);

/// Base glyph on an S x S canvas followed by the instance's affine transform.
GrayImage render_letter(const LetterInstance& inst, const CabcParams& p);

/// Sum of unit-amplitude isotropic Gaussians.
struct WarpTemplate {
  std::vector<Point2> centers;
  double sigma = 20;

  Point2 gradient(double x, double y) const;
};

WarpTemplate sample_warp_template(std::size_t size, std::size_t count, double sigma, Rng& rng);
/// out(p) = in(p - gain * grad T(p)), bilinear, binarised at 0.5.
GrayImage warp(const GrayImage& src, const WarpTemplate& tmpl, double gain);
/// Mean |gain * grad T| over all pixel centres of a size x size canvas.
double mean_displacement(const WarpTemplate& tmpl, std::size_t size, double gain);
/// Gain whose mean displacement over a fixed set of templates equals `target`.
double calibrate_warp_gain(std::size_t size, std::size_t count, double sigma, double target);
/// Gain used for the given parameters (configured or calibrated).
double effective_warp_gain(const CabcParams& p);

struct PixelateOptions {
  int cell = 5;
  double threshold = 0.3;  ///< a cell turns white when its white fraction exceeds this
  double jitter_sd = 2;
  double jitter_cap = 4;
};

/// Cell quantisation without jitter.
GrayImage pixelate_cells(const GrayImage& src, const PixelateOptions& opt = {});
/// Quantises into cells and translates each white cell by a truncated normal
/// offset per axis; cells are OR-composited. Offsets are reported if requested.
GrayImage pixelate(const GrayImage& src, Rng& rng, const PixelateOptions& opt = {},
                   std::vector<std::pair<int, int>>* offsets = nullptr);

struct Placement {
  GrayImage composite;
  std::array<GrayImage, 2> masks;
  std::array<Point2, 2> targets;  ///< requested centres of mass
};

/// Moves each letter's centre of mass to (r, theta) and (r, theta + dtheta)
/// around the image centre (r in pixels of this image). Returns nullopt if a
/// letter would be clipped.
std::optional<Placement> place_letters(const GrayImage& a, const GrayImage& b, double r, double theta_deg,
                                       double dtheta_deg, std::uint8_t intensity_a = 255,
                                       std::uint8_t intensity_b = 255);

/// Both letters' discs fit the own mask dilated by one pixel and never touch
/// the other letter's mask. Same-label markers go on one randomly chosen
/// letter at least `separation` apart. Segmentation places one marker.
std::optional<std::vector<Marker>> place_markers(const std::array<GrayImage, 2>& masks, int label,
                                                 bool segmentation, Rng& rng, int radius, double separation);

/// Both above 128 and at least 40 apart.
bool luminance_pair_valid(int a, int b);
std::pair<int, int> sample_luminance_pair(Rng& rng);

/// Masks separated by at least one background pixel in the 8-neighbourhood.
bool masks_separated(const GrayImage& a, const GrayImage& b);

/// Deterministic sample for (params.seed, index).
StimulusSample generate_cabc_sample(const CabcParams& p, std::uint64_t index);

/// audit_common plus the cABC rules (marker fit, exclusivity, separation,
/// composition, control constraints).
std::vector<std::string> audit_cabc_sample(const StimulusSample& s, const CabcParams& p);

DatasetSummary generate_cabc_dataset(const std::filesystem::path& dir, const CabcParams& p);

}  // namespace pgroup
