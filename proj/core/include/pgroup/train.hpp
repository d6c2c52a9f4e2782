#pragma once

#include <concepts>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pgroup/architecture.hpp"
#include "pgroup/dataset.hpp"

namespace pgroup {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::vector<double> learning_rates{1e-3, 1e-4, 1e-5, 1e-6};
  std::size_t seeds = 5;  ///< runs per learning rate in a sweep
  std::size_t patience = 10;
  std::size_t max_epochs = 48;
  double learning_rate = 1e-3;  ///< single-run learning rate
  std::uint64_t seed = 0;       ///< single-run seed
  unsigned workers = 1;         ///< concurrent runs in a sweep
  bool save_checkpoints = true;

  void validate() const;
  void write(KeyValueConfig& kv, const std::string& prefix = "train.") const;
  static TrainConfig read(const KeyValueConfig& kv, const std::string& prefix = "train.");
};

enum class StopReason { patience, max_epochs };
std::string stop_reason_name(StopReason r);

/// Stops after `patience` consecutive epochs without a strict improvement of
/// the best validation loss, or after `max_epochs`.
class EarlyStopper {
 public:
  EarlyStopper(std::size_t patience, std::size_t max_epochs);

  /// Records one epoch's validation loss; returns true when training must stop.
  bool update(double val_loss);
  std::size_t epochs() const { return epochs_; }
  std::size_t since_improvement() const { return since_improvement_; }
  double best() const { return best_; }
  std::optional<StopReason> reason() const { return reason_; }

 private:
  std::size_t patience_, max_epochs_;
  std::size_t epochs_ = 0, since_improvement_ = 0;
  double best_;
  std::optional<StopReason> reason_;
};

struct EpochRecord {
  std::size_t epoch = 0;  ///< 1-based
  double train_loss = 0;
  double train_metric = 0;
  double val_loss = 0;
  double val_metric = 0;
  double seconds = 0;
};

struct RunResult {
  double learning_rate = 0;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::vector<float> batch_losses;  ///< every training batch loss in order
  std::size_t best_epoch = 0;       ///< 1-based epoch with the highest val metric
  double best_val_metric = 0;
  StopReason reason = StopReason::max_epochs;
  double wall_seconds = 0;
  std::filesystem::path run_dir;     ///< empty when not written to disk
  std::filesystem::path checkpoint;  ///< best-epoch checkpoint, if saved
  std::string error;                 ///< nonempty when the run failed

  bool ok() const { return error.empty(); }
};

/// Per-image outcome. Classification: logit and correctness at logit > 0.
/// Segmentation: mean pixel logit, per-image f1 and correctness at f1 > 0.6.
struct ImageScore {
  std::string id;
  int label = 0;
  double logit = 0;
  bool correct = false;
  double f1 = 0;
};

struct Evaluation {
  Task task = Task::classification;
  double loss = 0;
  double accuracy = 0;  ///< classification accuracy
  double f1 = 0;        ///< pixel f1 pooled over the split (segmentation)
  std::vector<ImageScore> images;

  double metric() const { return task == Task::classification ? accuracy : f1; }
};

/// Pooled binary f1 of logits > 0 against targets; 1 when both are empty.
double pixel_f1(std::span<const float> logits, std::span<const float> targets);

/// Mean binary cross-entropy with logits, evaluated in double precision.
double bce_with_logits_value(std::span<const float> logits, std::span<const float> targets);

template <std::floating_point T>
Evaluation evaluate(ModelState<T>& model, const DatasetSplit& split, std::size_t batch_size);

/// Writes per-image scores as CSV (id,label,logit,correct,f1).
void write_scores(const std::filesystem::path& path, const Evaluation& ev);

/// Epoch loop with shuffled batches (order from the seed), Adam updates, a
/// validation pass per epoch and early stopping on validation loss. Matrix
/// products run on one BLAS thread so a rerun reproduces the loss curve.
/// The model is left holding the best-epoch weights. With a run_dir, writes
/// config.txt, metrics.jsonl, losses.txt, best/ and result.json there.
/// Throws NumericError on a non-finite loss.
RunResult train(ModelState<float>& model, const DatasetSplit& train_split, const DatasetSplit& val_split,
                const TrainConfig& cfg, double learning_rate, std::uint64_t seed,
                const std::filesystem::path& run_dir = {}, std::ostream* log = nullptr);

struct SweepResult {
  std::vector<RunResult> runs;  ///< learning-rate major, seed minor
  std::size_t best = 0;         ///< index of the run with the highest best_val_metric
  bool any_ok() const;
};

/// Trains one fresh model per (learning rate, seed) cell; a failing run is
/// recorded and the grid continues.
SweepResult sweep(const ArchitectureConfig& arch, const DatasetSplit& train_split, const DatasetSplit& val_split,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir = {}, std::ostream* log = nullptr);

/// Seed used to initialise a run's weights.
std::uint64_t model_seed(std::uint64_t run_seed);
std::string run_name(double learning_rate, std::uint64_t seed);

struct StrainingCell {
  std::string variant;
  std::string difficulty;
  double best_val_metric = 0;
  std::filesystem::path run_dir;
};

struct StrainingTable {
  std::vector<std::string> variants;
  std::vector<std::string> difficulties;
  std::vector<StrainingCell> cells;  ///< variant major

  const StrainingCell& at(std::size_t v, std::size_t d) const { return cells.at(v * difficulties.size() + d); }
  void write_csv(const std::filesystem::path& path) const;
};

/// Sweeps every variant on every difficulty's dataset (given as
/// (difficulty name, dataset directory) pairs) and tabulates best val metric.
StrainingTable straining_sweep(const std::vector<Variant>& variants,
                               const std::vector<std::pair<std::string, std::filesystem::path>>& datasets,
                               const ArchitectureConfig& base, const TrainConfig& cfg,
                               const std::filesystem::path& out_dir, std::ostream* log = nullptr);

/// Per-pixel L2 norm of H1 across channels, differenced between consecutive
/// timesteps: maps[t - 1] = ||H1[t]|| - ||H1[t - 1]|| for image `n`.
std::vector<Tensor<float>> timecourse_maps(const ForwardTrace<float>& trace, std::size_t n);

}  // namespace pgroup
