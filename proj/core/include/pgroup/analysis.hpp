#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgroup/rng.hpp"

namespace pgroup {

/// Malformed trial or score file; the message names the file, line and column.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrialRecord {
  std::string participant_id;
  std::string image_id;
  std::string difficulty;
  std::string response;  ///< "same" or "different"
  bool correct = false;
  double rt_ms = 0;
  double rt_window_ms = 0;

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

inline constexpr const char* kTrialColumns[] = {"participant_id", "image_id", "difficulty", "response",
                                                "correct",        "rt_ms",    "rt_window_ms"};

/// Comma-separated trials with a header row naming the columns (any order).
std::vector<TrialRecord> parse_trials(std::istream& in, const std::string& source = "<input>");
std::vector<TrialRecord> read_trials(const std::filesystem::path& path);
void write_trials(const std::filesystem::path& path, std::span<const TrialRecord> trials);

inline constexpr double kMinResponseMs = 450;

/// Keeps trials answered in at least `min_rt_ms`.
std::vector<TrialRecord> filter_trials(std::span<const TrialRecord> trials, double min_rt_ms = kMinResponseMs);

struct ImageAccuracy {
  std::string image_id;
  std::string difficulty;
  std::size_t raters = 0;
  std::size_t correct = 0;

  double accuracy() const { return raters ? double(correct) / double(raters) : 0.0; }
};

/// Per-image tallies sorted by image id.
std::vector<ImageAccuracy> image_accuracies(std::span<const TrialRecord> trials);

/// logit(clamp(a, 1/(2n), 1 - 1/(2n))); throws for n = 0.
double human_logit(double accuracy, std::size_t raters);
/// Logits of every image with at least one rater, keyed by image id.
std::map<std::string, double> human_logits(std::span<const ImageAccuracy> images);

double spearman_brown(double r);
/// Pearson correlation; NaN when either input is constant.
double pearson(std::span<const double> x, std::span<const double> y);
/// Linear-interpolated percentile (q in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double q);

struct CeilingOptions {
  std::size_t repeats = 1000;
  double percentile = 95;
  std::uint64_t seed = 0;
  std::size_t max_discards = 100000;  ///< degenerate splits tolerated before giving up
};

struct CeilingResult {
  double ceiling = 0;
  std::vector<double> corrected;  ///< one Spearman-Brown value per repeat
  std::size_t discarded = 0;
};

/// Splits each image's raters at random into halves of ceil(n/2) and floor(n/2),
/// correlates the halves' per-image accuracies, applies Spearman-Brown and
/// reports the requested percentile over repeats. Splits with a constant half
/// are drawn again. Every image needs at least two raters.
CeilingResult splithalf_ceiling(std::span<const TrialRecord> trials, const CeilingOptions& opt = {});

struct PairedScores {
  std::vector<std::string> ids;
  std::vector<double> model;
  std::vector<double> human;
  std::vector<double> control;
};

struct ModelScore {
  std::string image_id;
  double logit = 0;
  bool correct = false;
};

/// Per-image scores as written by write_scores (image_id, logit, correct columns).
std::vector<ModelScore> read_model_scores(const std::filesystem::path& path);

/// Images present in both inputs, sorted by id; control = model correctness.
PairedScores pair_scores(std::span<const ModelScore> model, const std::map<std::string, double>& human);

struct ExplainedVariance {
  double correlation = 0;
  double ceiling = 0;
  std::optional<double> fraction;  ///< correlation / ceiling, only when ceiling > 0
};

/// Pearson correlation of paired logits divided by the ceiling; needs three pairs.
ExplainedVariance explained_variance(std::span<const double> model, std::span<const double> human, double ceiling);

struct PartialCorrelation {
  double r = 0;
  bool control_constant = false;  ///< plain correlation returned instead
};

/// Correlation of x and y after regressing the control out of both.
PartialCorrelation partial_correlation(std::span<const double> x, std::span<const double> y,
                                       std::span<const double> control);

struct BootstrapResult {
  double observed = 0;  ///< corr(a, human) - corr(b, human)
  double p = 1;         ///< two-sided
  std::size_t iterations = 0;
};

inline constexpr std::size_t kMinBootstrapIterations = 1000;

/// Resamples images with replacement and returns the two-sided p of the
/// difference in human correlation being zero.
BootstrapResult bootstrap_compare(std::span<const double> a, std::span<const double> b, std::span<const double> human,
                                  std::size_t iterations = 10000, std::uint64_t seed = 0);

/// Bernoulli trials: rater r answers image i correctly with probability p[i].
/// Image i has truth "same" for odd i; response times are 1000 ms.
std::vector<TrialRecord> simulate_raters(std::span<const double> p, std::size_t raters, std::uint64_t seed);

/// Expected full-panel split-half reliability for raters with per-image
/// accuracies p: var(p) / (var(p) + mean(p(1 - p)) / n).
double analytic_reliability(std::span<const double> p, std::size_t raters);

struct ModelConsistency {
  std::string name;
  std::size_t images = 0;
  ExplainedVariance explained;
  PartialCorrelation partial;
};

struct PairComparison {
  std::string a, b;
  BootstrapResult result;
};

struct ConsistencyReport {
  std::size_t trials_in = 0;
  std::size_t trials_kept = 0;
  std::size_t images = 0;
  CeilingResult ceiling;
  std::vector<ModelConsistency> models;
  std::vector<PairComparison> comparisons;  ///< one per unordered model pair

  /// "correlation/partial" with three decimals, e.g. "0.721/0.487".
  static std::string pair_text(const ModelConsistency& m);
};

struct ConsistencyOptions {
  CeilingOptions ceiling;
  std::size_t bootstrap_iterations = 10000;
  double min_rt_ms = kMinResponseMs;
};

ConsistencyReport consistency_report(std::span<const TrialRecord> trials,
                                     const std::vector<std::pair<std::string, std::vector<ModelScore>>>& models,
                                     const ConsistencyOptions& opt = {});

/// report.json plus explained_variance.png (one bar per model).
void write_report(const std::filesystem::path& dir, const ConsistencyReport& report);

}  // namespace pgroup
