#include "pgroup/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pgroup/bitmap.hpp"
#include "pgroup/keyvalue.hpp"
#include "pgroup/plot.hpp"
#include "pgroup/tensor.hpp"

namespace pgroup {
namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Header-indexed CSV reader shared by the trial and score loaders.
class CsvTable {
 public:
  CsvTable(std::istream& in, std::string source, std::span<const char* const> required)
      : in_(in), source_(std::move(source)) {
    std::string header;
    if (!std::getline(in_, header)) throw SchemaError(source_ + ": missing header row");
    line_ = 1;
    const auto names = split_fields(header);
    for (std::size_t i = 0; i < names.size(); ++i) columns_[names[i]] = i;
    width_ = names.size();
    for (const char* name : required)
      if (!columns_.contains(name))
        throw SchemaError(source_ + ":1: missing column '" + std::string(name) + "'");
  }

  bool next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      fields_ = split_fields(line);
      if (fields_.size() != width_)
        fail("expected " + std::to_string(width_) + " fields, found " + std::to_string(fields_.size()));
      return true;
    }
    return false;
  }

  const std::string& text(const std::string& column) const { return fields_[columns_.at(column)]; }

  double number(const std::string& column) const {
    const std::string& s = text(column);
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = std::string::npos;
    }
    if (used != s.size() || !std::isfinite(v)) fail("column '" + column + "': not a number: '" + s + "'");
    return v;
  }

  bool flag(const std::string& column) const {
    const std::string& s = text(column);
    if (s == "1" || s == "true") return true;
    if (s == "0" || s == "false") return false;
    fail("column '" + column + "': expected 0/1 or true/false, found '" + s + "'");
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw SchemaError(source_ + ":" + std::to_string(line_) + ": " + msg);
  }

 private:
  std::istream& in_;
  std::string source_;
  std::map<std::string, std::size_t> columns_;
  std::size_t width_ = 0;
  std::size_t line_ = 0;
  std::vector<std::string> fields_;
};

double mean(std::span<const double> x) { return std::accumulate(x.begin(), x.end(), 0.0) / double(x.size()); }

/// Residuals of y after least-squares regression on x (with intercept); nullopt if x is constant.
std::optional<std::vector<double>> residuals(std::span<const double> y, std::span<const double> x) {
  const double mx = mean(x), my = mean(y);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 0) return std::nullopt;
  const double slope = sxy / sxx;
  std::vector<double> r(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) r[i] = (y[i] - my) - slope * (x[i] - mx);
  return r;
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

std::vector<TrialRecord> parse_trials(std::istream& in, const std::string& source) {
  CsvTable csv(in, source, kTrialColumns);
  std::vector<TrialRecord> out;
  while (csv.next()) {
    TrialRecord t;
    t.participant_id = csv.text("participant_id");
    t.image_id = csv.text("image_id");
    t.difficulty = csv.text("difficulty");
    t.response = csv.text("response");
    if (t.participant_id.empty()) csv.fail("column 'participant_id': empty");
    if (t.image_id.empty()) csv.fail("column 'image_id': empty");
    if (t.response != "same" && t.response != "different")
      csv.fail("column 'response': expected same or different, found '" + t.response + "'");
    t.correct = csv.flag("correct");
    t.rt_ms = csv.number("rt_ms");
    t.rt_window_ms = csv.number("rt_window_ms");
    if (t.rt_ms < 0) csv.fail("column 'rt_ms': negative response time");
    if (t.rt_window_ms < 0) csv.fail("column 'rt_window_ms': negative window");
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<TrialRecord> read_trials(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  return parse_trials(in, path.string());
}

void write_trials(const std::filesystem::path& path, std::span<const TrialRecord> trials) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  require(bool(out), "cannot write " + path.string());
  for (std::size_t i = 0; i < std::size(kTrialColumns); ++i) out << (i ? "," : "") << kTrialColumns[i];
  out << '\n';
  for (const auto& t : trials)
    out << t.participant_id << ',' << t.image_id << ',' << t.difficulty << ',' << t.response << ','
        << (t.correct ? 1 : 0) << ',' << format_double(t.rt_ms) << ',' << format_double(t.rt_window_ms) << '\n';
}

std::vector<TrialRecord> filter_trials(std::span<const TrialRecord> trials, double min_rt_ms) {
  std::vector<TrialRecord> out;
  std::copy_if(trials.begin(), trials.end(), std::back_inserter(out),
               [&](const TrialRecord& t) { return t.rt_ms >= min_rt_ms; });
  return out;
}

std::vector<ImageAccuracy> image_accuracies(std::span<const TrialRecord> trials) {
  std::map<std::string, ImageAccuracy> by_id;
  for (const auto& t : trials) {
    auto& a = by_id[t.image_id];
    a.image_id = t.image_id;
    a.difficulty = t.difficulty;
    ++a.raters;
    a.correct += t.correct;
  }
  std::vector<ImageAccuracy> out;
  for (auto& [id, a] : by_id) out.push_back(std::move(a));
  return out;
}

double human_logit(double accuracy, std::size_t raters) {
  require(raters > 0, "human_logit: no raters");
  require(accuracy >= 0 && accuracy <= 1, "human_logit: accuracy outside [0, 1]");
  const double eps = 1.0 / (2.0 * double(raters));
  const double a = std::clamp(accuracy, eps, 1.0 - eps);
  return std::log(a / (1.0 - a));
}

std::map<std::string, double> human_logits(std::span<const ImageAccuracy> images) {
  std::map<std::string, double> out;
  for (const auto& a : images)
    if (a.raters > 0) out[a.image_id] = human_logit(a.accuracy(), a.raters);
  return out;
}

double spearman_brown(double r) { return 2.0 * r / (1.0 + r); }

double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "pearson: inputs differ in length");
  require(x.size() >= 2, "pearson: need at least two points");
  const double mx = mean(x), my = mean(y);
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 0 || syy <= 0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double percentile(std::vector<double> values, double q) {
  require(!values.empty(), "percentile: no values");
  require(q >= 0 && q <= 100, "percentile: q outside [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * double(values.size() - 1);
  const auto lo = std::size_t(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - double(lo)) * (values[hi] - values[lo]);
}

CeilingResult splithalf_ceiling(std::span<const TrialRecord> trials, const CeilingOptions& opt) {
  require(opt.repeats >= 1, "ceiling: need at least one repeat");
  std::map<std::string, std::vector<bool>> by_image;
  for (const auto& t : trials) by_image[t.image_id].push_back(t.correct);
  require(by_image.size() >= 3, "ceiling: need at least three images");
  for (const auto& [id, v] : by_image) require(v.size() >= 2, "ceiling: image " + id + " has fewer than two raters");

  CeilingResult res;
  std::vector<double> a(by_image.size()), b(by_image.size());
  for (std::size_t r = 0; r < opt.repeats; ++r) {
    for (std::size_t attempt = 0;; ++attempt) {
      Rng rng = make_rng(derive_seed(opt.seed, r), attempt);
      std::size_t i = 0;
      for (const auto& [id, v] : by_image) {
        std::vector<bool> shuffled = v;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const std::size_t half = (v.size() + 1) / 2;
        a[i] = double(std::count(shuffled.begin(), shuffled.begin() + long(half), true)) / double(half);
        b[i] = double(std::count(shuffled.begin() + long(half), shuffled.end(), true)) / double(v.size() - half);
        ++i;
      }
      const double rho = pearson(a, b);
      if (std::isfinite(rho) && rho > -1.0) {
        res.corrected.push_back(spearman_brown(rho));
        break;
      }
      if (++res.discarded > opt.max_discards) throw NumericError("ceiling: split halves are constant in every draw");
    }
  }
  res.ceiling = percentile(res.corrected, opt.percentile);
  return res;
}

std::vector<ModelScore> read_model_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  static constexpr const char* kColumns[] = {"image_id", "logit", "correct"};
  CsvTable csv(in, path.string(), kColumns);
  std::vector<ModelScore> out;
  std::set<std::string> seen;
  while (csv.next()) {
    ModelScore s;
    s.image_id = csv.text("image_id");
    if (!seen.insert(s.image_id).second) csv.fail("duplicate image_id '" + s.image_id + "'");
    s.logit = csv.number("logit");
    s.correct = csv.flag("correct");
    out.push_back(std::move(s));
  }
  return out;
}

PairedScores pair_scores(std::span<const ModelScore> model, const std::map<std::string, double>& human) {
  std::vector<const ModelScore*> sorted;
  for (const auto& s : model)
    if (human.contains(s.image_id)) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(), [](auto* x, auto* y) { return x->image_id < y->image_id; });
  PairedScores p;
  for (const auto* s : sorted) {
    p.ids.push_back(s->image_id);
    p.model.push_back(s->logit);
    p.human.push_back(human.at(s->image_id));
    p.control.push_back(s->correct ? 1.0 : 0.0);
  }
  return p;
}

ExplainedVariance explained_variance(std::span<const double> model, std::span<const double> human, double ceiling) {
  require(model.size() == human.size(), "explained variance: inputs differ in length");
  require(model.size() >= 3, "explained variance: need at least three paired images");
  ExplainedVariance e;
  e.correlation = pearson(model, human);
  e.ceiling = ceiling;
  if (ceiling > 0 && std::isfinite(e.correlation)) e.fraction = e.correlation / ceiling;
  return e;
}

PartialCorrelation partial_correlation(std::span<const double> x, std::span<const double> y,
                                       std::span<const double> control) {
  require(x.size() == y.size() && x.size() == control.size(), "partial correlation: inputs differ in length");
  require(x.size() >= 3, "partial correlation: need at least three points");
  PartialCorrelation p;
  const auto rx = residuals(x, control);
  const auto ry = residuals(y, control);
  if (!rx || !ry) {
    p.control_constant = true;
    p.r = pearson(x, y);
    return p;
  }
  p.r = pearson(*rx, *ry);
  if (!std::isfinite(p.r)) p.r = 0;  // a variable fully explained by the control
  return p;
}

BootstrapResult bootstrap_compare(std::span<const double> a, std::span<const double> b, std::span<const double> human,
                                  std::size_t iterations, std::uint64_t seed) {
  require(a.size() == human.size() && b.size() == human.size(), "bootstrap: inputs differ in length");
  require(human.size() >= 3, "bootstrap: need at least three images");
  require(iterations >= kMinBootstrapIterations, "bootstrap: at least 1000 iterations required");
  const std::size_t n = human.size();
  BootstrapResult res;
  res.iterations = iterations;
  res.observed = pearson(a, human) - pearson(b, human);

  std::size_t le = 0, ge = 0, valid = 0;
  std::vector<double> ra(n), rb(n), rh(n);
  for (std::size_t it = 0; it < iterations; ++it) {
    Rng rng = make_rng(seed, it);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t j = pick(rng);
      ra[k] = a[j];
      rb[k] = b[j];
      rh[k] = human[j];
    }
    const double d = pearson(ra, rh) - pearson(rb, rh);
    if (!std::isfinite(d)) continue;
    ++valid;
    le += d <= 0;
    ge += d >= 0;
  }
  if (valid == 0) throw NumericError("bootstrap: every resample was degenerate");
  res.p = std::min(1.0, 2.0 * double(std::min(le, ge)) / double(valid));
  return res;
}

std::vector<TrialRecord> simulate_raters(std::span<const double> p, std::size_t raters, std::uint64_t seed) {
  std::vector<TrialRecord> out;
  out.reserve(p.size() * raters);
  for (std::size_t r = 0; r < raters; ++r) {
    Rng rng = make_rng(seed, r);
    char pid[32];
    std::snprintf(pid, sizeof pid, "r%04zu", r);
    for (std::size_t i = 0; i < p.size(); ++i) {
      require(p[i] >= 0 && p[i] <= 1, "simulate_raters: probability outside [0, 1]");
      TrialRecord t;
      t.participant_id = pid;
      char iid[32];
      std::snprintf(iid, sizeof iid, "%06zu", i);
      t.image_id = iid;
      t.difficulty = "simulated";
      t.correct = std::bernoulli_distribution(p[i])(rng);
      const bool truth_same = i % 2 == 1;
      t.response = (t.correct == truth_same) ? "same" : "different";
      t.rt_ms = 1000;
      t.rt_window_ms = 3000;
      out.push_back(std::move(t));
    }
  }
  return out;
}

double analytic_reliability(std::span<const double> p, std::size_t raters) {
  require(!p.empty() && raters > 0, "analytic reliability: empty input");
  const double m = mean(p);
  double var = 0, noise = 0;
  for (double v : p) {
    var += (v - m) * (v - m);
    noise += v * (1 - v);
  }
  var /= double(p.size());
  noise /= double(p.size());
  return var / (var + noise / double(raters));
}

std::string ConsistencyReport::pair_text(const ModelConsistency& m) {
  return fixed3(m.explained.correlation) + "/" + fixed3(m.partial.r);
}

ConsistencyReport consistency_report(std::span<const TrialRecord> trials,
                                     const std::vector<std::pair<std::string, std::vector<ModelScore>>>& models,
                                     const ConsistencyOptions& opt) {
  ConsistencyReport rep;
  rep.trials_in = trials.size();
  const auto kept = filter_trials(trials, opt.min_rt_ms);
  rep.trials_kept = kept.size();
  // Images need two retained raters to enter the ceiling and the logits.
  const auto acc = image_accuracies(kept);
  std::set<std::string> usable;
  std::vector<ImageAccuracy> usable_acc;
  for (const auto& a : acc)
    if (a.raters >= 2) {
      usable.insert(a.image_id);
      usable_acc.push_back(a);
    }
  std::vector<TrialRecord> usable_trials;
  for (const auto& t : kept)
    if (usable.contains(t.image_id)) usable_trials.push_back(t);
  rep.images = usable.size();
  rep.ceiling = splithalf_ceiling(usable_trials, opt.ceiling);
  const auto human = human_logits(usable_acc);

  std::vector<PairedScores> paired;
  for (const auto& [name, scores] : models) {
    ModelConsistency m;
    m.name = name;
    paired.push_back(pair_scores(scores, human));
    const auto& p = paired.back();
    m.images = p.ids.size();
    m.explained = explained_variance(p.model, p.human, rep.ceiling.ceiling);
    m.partial = partial_correlation(p.model, p.human, p.control);
    rep.models.push_back(std::move(m));
  }

  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = i + 1; j < models.size(); ++j) {
      std::map<std::string, double> b_by_id;
      for (std::size_t k = 0; k < paired[j].ids.size(); ++k) b_by_id[paired[j].ids[k]] = paired[j].model[k];
      std::vector<double> a, b, h;
      for (std::size_t k = 0; k < paired[i].ids.size(); ++k) {
        const auto it = b_by_id.find(paired[i].ids[k]);
        if (it == b_by_id.end()) continue;
        a.push_back(paired[i].model[k]);
        b.push_back(it->second);
        h.push_back(paired[i].human[k]);
      }
      PairComparison c;
      c.a = models[i].first;
      c.b = models[j].first;
      c.result = bootstrap_compare(a, b, h, opt.bootstrap_iterations, derive_seed(opt.ceiling.seed, i * 1000 + j));
      rep.comparisons.push_back(std::move(c));
    }
  return rep;
}

void write_report(const std::filesystem::path& dir, const ConsistencyReport& rep) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["trials_in"] = rep.trials_in;
  j["trials_kept"] = rep.trials_kept;
  j["images"] = rep.images;
  j["ceiling"] = rep.ceiling.ceiling;
  j["ceiling_repeats"] = rep.ceiling.corrected.size();
  j["ceiling_discarded"] = rep.ceiling.discarded;
  j["models"] = nlohmann::json::array();
  for (const auto& m : rep.models) {
    nlohmann::json mj{{"name", m.name},
                      {"images", m.images},
                      {"correlation", m.explained.correlation},
                      {"partial_correlation", m.partial.r},
                      {"partial_control_constant", m.partial.control_constant},
                      {"summary", ConsistencyReport::pair_text(m)}};
    if (m.explained.fraction) mj["explained_variance"] = *m.explained.fraction;
    j["models"].push_back(mj);
  }
  j["comparisons"] = nlohmann::json::array();
  for (const auto& c : rep.comparisons)
    j["comparisons"].push_back(
        {{"a", c.a}, {"b", c.b}, {"difference", c.result.observed}, {"p", c.result.p}, {"iterations", c.result.iterations}});
  std::ofstream(dir / "report.json") << j.dump(2) << '\n';

  std::vector<double> values;
  for (const auto& m : rep.models) values.push_back(m.explained.fraction.value_or(0.0));
  if (!values.empty()) {
    BarChartOptions opt;
    opt.y_min = std::min(0.0, *std::min_element(values.begin(), values.end()));
    opt.y_max = std::max(1.0, *std::max_element(values.begin(), values.end()));
    opt.group_size = values.size();
    write_png(dir / "explained_variance.png", bar_chart(values, {}, opt));
  }
}

}  // namespace pgroup
