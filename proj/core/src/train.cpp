#include "pgroup/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "pgroup/adam.hpp"
#include "pgroup/checkpoint.hpp"
#include "pgroup/ops.hpp"
#include "pgroup/plot.hpp"

namespace pgroup {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct F1Counts {
  std::size_t tp = 0, fp = 0, fn = 0;

  void add(const F1Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
  }
  double f1() const {
    if (tp + fp + fn == 0) return 1.0;
    return 2.0 * double(tp) / double(2 * tp + fp + fn);
  }
};

template <class T>
F1Counts count_f1(std::span<const T> logits, std::span<const T> targets) {
  require(logits.size() == targets.size(), "f1: logits and targets differ in size");
  F1Counts c;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const bool p = logits[i] > 0, t = targets[i] > T(0.5);
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
  }
  return c;
}

template <class T>
double bce_sum(std::span<const T> logits, std::span<const T> targets) {
  require(logits.size() == targets.size(), "bce: logits and targets differ in size");
  double s = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i], y = targets[i];
    s += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  return s;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ContractError("bad number in list: '" + item + "'");
    }
    while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
    require(used == item.size(), "bad number in list: '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::string join_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

std::string hex_float(float v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", double(v));
  return buf;
}

struct Snapshot {
  std::vector<Tensor<float>> tensors;

  static Snapshot take(ModelState<float>& m) {
    Snapshot s;
    m.visit_parameters([&](const std::string&, Tensor<float>& t) { s.tensors.push_back(t); });
    m.visit_buffers([&](const std::string&, Tensor<float>& t) { s.tensors.push_back(t); });
    return s;
  }
  void restore(ModelState<float>& m) const {
    std::size_t i = 0;
    m.visit_parameters([&](const std::string&, Tensor<float>& t) { t = tensors.at(i++); });
    m.visit_buffers([&](const std::string&, Tensor<float>& t) { t = tensors.at(i++); });
  }
};

nlohmann::json epoch_json(const EpochRecord& e) {
  return {{"epoch", e.epoch},         {"train_loss", e.train_loss}, {"train_metric", e.train_metric},
          {"val_loss", e.val_loss},   {"val_metric", e.val_metric}, {"seconds", e.seconds}};
}

nlohmann::json result_json(const RunResult& r) {
  nlohmann::json j{{"learning_rate", r.learning_rate},
                   {"seed", r.seed},
                   {"epochs", r.epochs.size()},
                   {"best_epoch", r.best_epoch},
                   {"best_val_metric", r.best_val_metric},
                   {"stop_reason", stop_reason_name(r.reason)},
                   {"wall_seconds", r.wall_seconds},
                   {"checkpoint", r.checkpoint.string()}};
  if (!r.ok()) j["error"] = r.error;
  return j;
}

void check_split(const ArchitectureConfig& arch, const DatasetSplit& split, const std::string& name) {
  require(split.size() > 0, name + " split is empty");
  require(split.image_size == arch.image_size, name + " split image size " + std::to_string(split.image_size) +
                                                   " does not match the model's " + std::to_string(arch.image_size));
  require(split.segmentation == (arch.task == Task::segmentation),
          name + " split task does not match the model task " + task_name(arch.task));
}

}  // namespace

void TrainConfig::validate() const {
  require(batch_size >= 1, "train: batch size must be positive");
  require(!learning_rates.empty(), "train: learning-rate grid is empty");
  for (double lr : learning_rates) require(lr > 0 && std::isfinite(lr), "train: learning rates must be positive");
  require(learning_rate > 0 && std::isfinite(learning_rate), "train: learning rate must be positive");
  require(seeds >= 1, "train: at least one seed per learning rate");
  require(patience >= 1, "train: patience must be positive");
  require(patience < max_epochs, "train: patience must be smaller than max epochs");
  require(workers >= 1, "train: workers must be positive");
}

void TrainConfig::write(KeyValueConfig& kv, const std::string& prefix) const {
  kv.set(prefix + "batch_size", std::to_string(batch_size));
  kv.set(prefix + "learning_rates", join_list(learning_rates));
  kv.set(prefix + "seeds", std::to_string(seeds));
  kv.set(prefix + "patience", std::to_string(patience));
  kv.set(prefix + "max_epochs", std::to_string(max_epochs));
  kv.set(prefix + "learning_rate", format_double(learning_rate));
  kv.set(prefix + "seed", std::to_string(seed));
  kv.set(prefix + "workers", std::to_string(workers));
  kv.set(prefix + "save_checkpoints", save_checkpoints ? "true" : "false");
}

TrainConfig TrainConfig::read(const KeyValueConfig& kv, const std::string& prefix) {
  TrainConfig c;
  c.batch_size = kv.get_size(prefix + "batch_size", c.batch_size);
  if (kv.contains(prefix + "learning_rates")) c.learning_rates = parse_list(kv.get(prefix + "learning_rates"));
  c.seeds = kv.get_size(prefix + "seeds", c.seeds);
  c.patience = kv.get_size(prefix + "patience", c.patience);
  c.max_epochs = kv.get_size(prefix + "max_epochs", c.max_epochs);
  c.learning_rate = kv.get_or(prefix + "learning_rate", c.learning_rate);
  c.seed = kv.get_or(prefix + "seed", c.seed);
  c.workers = unsigned(kv.get_size(prefix + "workers", c.workers));
  c.save_checkpoints = kv.get_or(prefix + "save_checkpoints", c.save_checkpoints);
  c.validate();
  return c;
}

std::string stop_reason_name(StopReason r) { return r == StopReason::patience ? "patience" : "max_epochs"; }

EarlyStopper::EarlyStopper(std::size_t patience, std::size_t max_epochs)
    : patience_(patience), max_epochs_(max_epochs), best_(std::numeric_limits<double>::infinity()) {
  require(patience >= 1 && patience < max_epochs, "early stopping: need 1 <= patience < max epochs");
}

bool EarlyStopper::update(double val_loss) {
  require(!reason_, "early stopping: update after stop");
  ++epochs_;
  if (val_loss < best_) {
    best_ = val_loss;
    since_improvement_ = 0;
  } else {
    ++since_improvement_;
  }
  if (since_improvement_ >= patience_)
    reason_ = StopReason::patience;
  else if (epochs_ >= max_epochs_)
    reason_ = StopReason::max_epochs;
  return reason_.has_value();
}

double pixel_f1(std::span<const float> logits, std::span<const float> targets) {
  return count_f1(logits, targets).f1();
}

double bce_with_logits_value(std::span<const float> logits, std::span<const float> targets) {
  require(!logits.empty(), "bce: empty input");
  return bce_sum(logits, targets) / double(logits.size());
}

template <std::floating_point T>
Evaluation evaluate(ModelState<T>& model, const DatasetSplit& split, std::size_t batch_size) {
  require(split.size() > 0, "evaluate: empty split");
  require(batch_size >= 1, "evaluate: batch size must be positive");
  check_split(model.config, split, "evaluate");
  Evaluation ev;
  ev.task = model.config.task;
  const bool seg = ev.task == Task::segmentation;
  double loss_sum = 0;
  std::size_t loss_count = 0, correct = 0;
  F1Counts pooled;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    idx.resize(std::min(batch_size, split.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<T> logits = predict(model, batch_images<T>(split, idx));
    const Tensor<T> targets = batch_targets<T>(split, idx);
    loss_sum += bce_sum(logits.values(), targets.values());
    loss_count += logits.size();
    const std::size_t per = logits.size() / idx.size();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      ImageScore s;
      s.id = split.ids[idx[k]];
      s.label = split.labels[idx[k]];
      const auto l = logits.values().subspan(k * per, per);
      if (seg) {
        const F1Counts c = count_f1(l, targets.values().subspan(k * per, per));
        pooled.add(c);
        s.logit = std::accumulate(l.begin(), l.end(), 0.0) / double(per);
        s.f1 = c.f1();
        s.correct = s.f1 > 0.6;
      } else {
        s.logit = l[0];
        const bool pred = l[0] > 0;
        s.correct = pred == (s.label == kLabelSame);
        pooled.tp += pred && s.label == kLabelSame;
        pooled.fp += pred && s.label != kLabelSame;
        pooled.fn += !pred && s.label == kLabelSame;
        s.f1 = s.correct ? 1.0 : 0.0;
      }
      correct += s.correct;
      ev.images.push_back(std::move(s));
    }
  }
  ev.loss = loss_sum / double(loss_count);
  ev.accuracy = double(correct) / double(split.size());
  ev.f1 = pooled.f1();
  return ev;
}

template Evaluation evaluate(ModelState<float>&, const DatasetSplit&, std::size_t);
template Evaluation evaluate(ModelState<double>&, const DatasetSplit&, std::size_t);

void write_scores(const std::filesystem::path& path, const Evaluation& ev) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  require(bool(out), "cannot write " + path.string());
  out << "image_id,label,logit,correct,f1\n";
  for (const auto& s : ev.images)
    out << s.id << ',' << s.label << ',' << format_double(s.logit) << ',' << (s.correct ? 1 : 0) << ','
        << format_double(s.f1) << '\n';
}

RunResult train(ModelState<float>& model, const DatasetSplit& train_split, const DatasetSplit& val_split,
                const TrainConfig& cfg, double learning_rate, std::uint64_t seed, const std::filesystem::path& run_dir,
                std::ostream* log) {
  cfg.validate();
  require(learning_rate > 0 && std::isfinite(learning_rate), "train: learning rate must be positive");
  check_split(model.config, train_split, "train");
  check_split(model.config, val_split, "val");
  set_gemm_threads(1);

  const auto t0 = Clock::now();
  RunResult r;
  r.learning_rate = learning_rate;
  r.seed = seed;
  r.run_dir = run_dir;
  const bool seg = model.config.task == Task::segmentation;

  std::ofstream metrics;
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    KeyValueConfig snap;
    model.config.write(snap);
    cfg.write(snap);
    snap.set("run.learning_rate", format_double(learning_rate));
    snap.set("run.seed", std::to_string(seed));
    snap.set("run.train_count", std::to_string(train_split.size()));
    snap.set("run.val_count", std::to_string(val_split.size()));
    snap.save(run_dir / "config.txt");
    metrics.open(run_dir / "metrics.jsonl");
    require(bool(metrics), "cannot write " + (run_dir / "metrics.jsonl").string());
  }

  std::vector<Tensor<float>*> params;
  model.visit_parameters([&](const std::string&, Tensor<float>& t) { params.push_back(&t); });
  AdamState<float> adam(AdamOptions{.learning_rate = learning_rate});
  EarlyStopper stopper(cfg.patience, cfg.max_epochs);
  Snapshot best;
  double best_metric = -std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_split.size());
  std::vector<Tensor<float>> grads(params.size());
  for (std::size_t epoch = 1;; ++epoch) {
    const auto te = Clock::now();
    std::iota(order.begin(), order.end(), std::size_t(0));
    Rng shuffle_rng = make_rng(seed, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0;
    std::size_t correct = 0, batch_index = 0;
    F1Counts pooled;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const Tensor<float> images = batch_images<float>(train_split, idx);
      const Tensor<float> targets = batch_targets<float>(train_split, idx);
      auto where = [&] {
        std::ostringstream msg;
        msg << " at epoch " << epoch << " batch " << batch_index + 1 << " (lr " << format_double(learning_rate)
            << ", seed " << seed << ")";
        return msg.str();
      };
      Tape<float> tape;
      ParamBinder<float> bind(tape, true);
      std::optional<Var<float>> logits_var, loss_var;
      try {
        logits_var = forward(model, bind, images, Mode::train);
        loss_var = loss(*logits_var, targets);
      } catch (const NumericError& e) {
        throw NumericError(e.what() + where());
      }
      const Var<float>& logits = *logits_var;
      const Var<float>& l = *loss_var;
      const float lv = l.value().item();
      if (!std::isfinite(lv)) throw NumericError("non-finite training loss" + where());
      r.batch_losses.push_back(lv);
      loss_sum += double(lv) * double(idx.size());
      const Tensor<float> logit_values = logits.value();
      if (seg) {
        pooled.add(count_f1(logit_values.values(), targets.values()));
      } else {
        for (std::size_t k = 0; k < idx.size(); ++k) correct += (logit_values[k] > 0) == (targets[k] > 0.5f);
      }

      const Gradients<float> g = tape.backward(l);
      for (std::size_t i = 0; i < params.size(); ++i) {
        const Var<float>* v = bind.find(*params[i]);
        grads[i] = v ? g.at(*v) : Tensor<float>(params[i]->shape());
      }
      adam_step<float>(params, grads, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(order.size());
    rec.train_metric = seg ? pooled.f1() : double(correct) / double(order.size());
    const Evaluation ev = evaluate(model, val_split, cfg.batch_size);
    rec.val_loss = ev.loss;
    rec.val_metric = ev.metric();
    rec.seconds = seconds_since(te);
    r.epochs.push_back(rec);
    if (rec.val_metric > best_metric) {
      best_metric = rec.val_metric;
      r.best_epoch = epoch;
      best = Snapshot::take(model);
    }
    if (metrics) metrics << epoch_json(rec).dump() << '\n' << std::flush;
    if (log) {
      char line[200];
      std::snprintf(line, sizeof line, "epoch %3zu  train loss %.5f metric %.4f  val loss %.5f metric %.4f  %.1fs\n",
                    epoch, rec.train_loss, rec.train_metric, rec.val_loss, rec.val_metric, rec.seconds);
      *log << line << std::flush;
    }
    if (stopper.update(rec.val_loss)) break;
  }
  r.reason = *stopper.reason();
  r.best_val_metric = best_metric;
  best.restore(model);
  r.wall_seconds = seconds_since(t0);

  if (!run_dir.empty()) {
    std::ofstream losses(run_dir / "losses.txt");
    for (float v : r.batch_losses) losses << hex_float(v) << '\n';
    if (cfg.save_checkpoints) {
      r.checkpoint = run_dir / "best";
      save_checkpoint(r.checkpoint, model);
    }
    std::ofstream(run_dir / "result.json") << result_json(r).dump(2) << '\n';
  }
  return r;
}

bool SweepResult::any_ok() const {
  return std::any_of(runs.begin(), runs.end(), [](const RunResult& r) { return r.ok(); });
}

std::uint64_t model_seed(std::uint64_t run_seed) { return derive_seed(run_seed, 0xffffffffffffffffULL); }

std::string run_name(double learning_rate, std::uint64_t seed) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "lr%.0e_seed%llu", learning_rate, static_cast<unsigned long long>(seed));
  return buf;
}

SweepResult sweep(const ArchitectureConfig& arch, const DatasetSplit& train_split, const DatasetSplit& val_split,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir, std::ostream* log) {
  cfg.validate();
  arch.validate();
  SweepResult res;
  for (double lr : cfg.learning_rates)
    for (std::size_t s = 0; s < cfg.seeds; ++s) {
      RunResult r;
      r.learning_rate = lr;
      r.seed = cfg.seed + s;
      if (!out_dir.empty()) r.run_dir = out_dir / run_name(lr, r.seed);
      res.runs.push_back(std::move(r));
    }

  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < res.runs.size(); i = next++) {
      RunResult& slot = res.runs[i];
      std::ostringstream buffer;
      std::ostream* run_log = log ? (cfg.workers == 1 ? log : &buffer) : nullptr;
      if (run_log) {
        std::lock_guard lock(log_mutex);
        *log << "run " << i + 1 << "/" << res.runs.size() << ": " << run_name(slot.learning_rate, slot.seed) << '\n';
      }
      try {
        Rng init(model_seed(slot.seed));
        ModelState<float> model = build_model<float>(arch, init);
        slot = train(model, train_split, val_split, cfg, slot.learning_rate, slot.seed, slot.run_dir, run_log);
      } catch (const std::exception& e) {
        slot.error = e.what();
        slot.epochs.clear();
        slot.batch_losses.clear();
        slot.best_val_metric = 0;
        if (!slot.run_dir.empty()) {
          std::filesystem::create_directories(slot.run_dir);
          std::ofstream(slot.run_dir / "result.json") << result_json(slot).dump(2) << '\n';
        }
      }
      if (log) {
        std::lock_guard lock(log_mutex);
        if (run_log == &buffer) *log << buffer.str();
        if (!slot.ok()) *log << "run " << run_name(slot.learning_rate, slot.seed) << " failed: " << slot.error << '\n';
        *log << std::flush;
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(cfg.workers, unsigned(res.runs.size())));
  std::vector<std::thread> threads;
  for (unsigned w = 1; w < n; ++w) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < res.runs.size(); ++i)
    if (res.runs[i].ok() && res.runs[i].best_val_metric > best) {
      best = res.runs[i].best_val_metric;
      res.best = i;
    }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& r : res.runs) {
      auto j = result_json(r);
      j["run_dir"] = r.run_dir.filename().string();
      grid.push_back(j);
    }
    nlohmann::json summary{{"runs", grid}, {"any_ok", res.any_ok()}};
    if (res.any_ok()) summary["best"] = res.best;
    std::ofstream(out_dir / "sweep.json") << summary.dump(2) << '\n';
  }
  return res;
}

void StrainingTable::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  require(bool(out), "cannot write " + path.string());
  out << "variant,difficulty,best_val_metric,run_dir\n";
  for (const auto& c : cells)
    out << c.variant << ',' << c.difficulty << ',' << format_double(c.best_val_metric) << ',' << c.run_dir.string()
        << '\n';
}

StrainingTable straining_sweep(const std::vector<Variant>& variants,
                               const std::vector<std::pair<std::string, std::filesystem::path>>& datasets,
                               const ArchitectureConfig& base, const TrainConfig& cfg,
                               const std::filesystem::path& out_dir, std::ostream* log) {
  require(!variants.empty() && !datasets.empty(), "straining: need at least one variant and one dataset");
  StrainingTable table;
  for (Variant v : variants) table.variants.push_back(variant_name(v));
  for (const auto& d : datasets) table.difficulties.push_back(d.first);
  table.cells.resize(variants.size() * datasets.size());

  for (std::size_t d = 0; d < datasets.size(); ++d) {
    const DatasetSplit train_split = load_split(datasets[d].second, "train");
    const DatasetSplit val_split = load_split(datasets[d].second, "val");
    for (std::size_t v = 0; v < variants.size(); ++v) {
      ArchitectureConfig arch = base;
      arch.variant = variants[v];
      arch.image_size = train_split.image_size;
      arch.task = train_split.segmentation ? Task::segmentation : Task::classification;
      const auto dir = out_dir / table.variants[v] / table.difficulties[d];
      if (log) *log << "straining: " << table.variants[v] << " on " << table.difficulties[d] << '\n';
      const SweepResult s = sweep(arch, train_split, val_split, cfg, dir, log);
      require(s.any_ok(), "straining: every run failed for " + table.variants[v] + " on " + table.difficulties[d] +
                              ": " + s.runs.front().error);
      auto& cell = table.cells[v * datasets.size() + d];
      cell.variant = table.variants[v];
      cell.difficulty = table.difficulties[d];
      cell.best_val_metric = s.runs[s.best].best_val_metric;
      cell.run_dir = s.runs[s.best].run_dir;
    }
  }

  table.write_csv(out_dir / "straining.csv");
  // Grouped by difficulty, one colour per variant.
  std::vector<double> values;
  for (std::size_t d = 0; d < datasets.size(); ++d)
    for (std::size_t v = 0; v < variants.size(); ++v) values.push_back(table.at(v, d).best_val_metric);
  BarChartOptions opt;
  opt.group_size = variants.size();
  write_png(out_dir / "straining.png", bar_chart(values, {}, opt));
  return table;
}

std::vector<Tensor<float>> timecourse_maps(const ForwardTrace<float>& trace, std::size_t n) {
  std::vector<Tensor<float>> maps;
  if (trace.h1.size() < 2) return maps;
  const Shape& s = trace.h1.front().shape();
  require(s.size() == 4 && n < s[0], "timecourse: image index out of range");
  const std::size_t C = s[1], H = s[2], W = s[3];
  auto norms = [&](const Tensor<float>& h) {
    Tensor<float> out(Shape{H, W});
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0;
        for (std::size_t c = 0; c < C; ++c) acc += double(h.at(n, c, y, x)) * double(h.at(n, c, y, x));
        out[y * W + x] = float(std::sqrt(acc));
      }
    return out;
  };
  Tensor<float> prev = norms(trace.h1[0]);
  for (std::size_t t = 1; t < trace.h1.size(); ++t) {
    Tensor<float> cur = norms(trace.h1[t]);
    Tensor<float> diff(Shape{H, W});
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = cur[i] - prev[i];
    maps.push_back(std::move(diff));
    prev = std::move(cur);
  }
  return maps;
}

}  // namespace pgroup
