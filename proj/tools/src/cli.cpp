#include "pgroup/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pgroup/analysis.hpp"
#include "pgroup/cabc.hpp"
#include "pgroup/checkpoint.hpp"
#include "pgroup/pathfinder.hpp"
#include "pgroup/plot.hpp"
#include "pgroup/serialize.hpp"
#include "pgroup/train.hpp"

namespace pgroup::cli {
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_list(const std::string& text, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

/// "name=path" items of a comma-separated list, in order.
std::vector<std::pair<std::string, fs::path>> named_paths(const std::string& text, const std::string& key) {
  std::vector<std::pair<std::string, fs::path>> out;
  for (const auto& item : split_list(text)) {
    const auto eq = item.find('=');
    require(eq != std::string::npos && eq > 0 && eq + 1 < item.size(),
            key + ": expected name=path entries, got '" + item + "'");
    out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
  }
  return out;
}

std::string join(const std::vector<std::string>& v, const std::string& sep = ",") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
  return s;
}

std::string required(const KeyValueConfig& kv, const std::string& key, const std::string& flag) {
  if (!kv.contains(key) || kv.get(key).empty()) throw ContractError(key + " is required (" + flag + ")");
  return kv.get(key);
}

void warn_unused(const KeyValueConfig& kv, std::ostream& err) {
  for (const auto& k : kv.unused_keys())
    if (!k.starts_with("run.") && !k.starts_with("dataset.")) err << "warning: config key '" << k << "' was not used\n";
}

void write_snapshot(const fs::path& dir, const KeyValueConfig& kv, const std::string& name = "config.txt") {
  fs::create_directories(dir);
  kv.save(dir / name);
}

std::string difficulty_length(const std::string& difficulty) {
  if (difficulty == "easy") return "6";
  if (difficulty == "intermediate") return "9";
  if (difficulty == "hard") return "14";
  throw ContractError("unknown difficulty '" + difficulty + "' (easy, intermediate, hard)");
}

/// Flags shared by every subcommand.
void add_common(CLI::App* app, RunSpec& spec) {
  app->add_option("--config", spec.config_path, "Key-value config file parsed before flags and overrides");
  app->add_option("--set", spec.overrides, "Override one config key (key=value); repeatable")->allow_extra_args(false);
  app->add_option("--out", spec.out, "Output directory");
  app->add_option("--seed", spec.seed, "Global seed");
  app->add_option("--workers", spec.workers, "Worker threads")->check(CLI::PositiveNumber);
}

/// Registers a flag whose value is recorded as `key=value` when given.
template <class T>
CLI::Option* keyed(CLI::App* app, RunSpec& spec, const std::string& flag, const std::string& key,
                   const std::string& help) {
  return app->add_option_function<T>(
      flag,
      [&spec, key](const T& v) {
        std::ostringstream os;
        os << v;
        spec.flag_settings.push_back(key + "=" + os.str());
      },
      help);
}

ArchitectureConfig model_for(const KeyValueConfig& kv, const DatasetSplit& split) {
  ArchitectureConfig arch = ArchitectureConfig::read(kv);
  arch.image_size = split.image_size;
  arch.task = split.segmentation ? Task::segmentation : Task::classification;
  arch.validate();
  return arch;
}

void print_run(std::ostream& out, const RunResult& r) {
  out << run_name(r.learning_rate, r.seed) << ": ";
  if (!r.ok()) {
    out << "failed: " << r.error << '\n';
    return;
  }
  out << "best val metric " << format_double(r.best_val_metric) << " at epoch " << r.best_epoch << " of "
      << r.epochs.size() << " (" << stop_reason_name(r.reason) << ")\n";
}

// --- generate --------------------------------------------------------------

int cmd_generate(const RunSpec& spec, const std::string& challenge_flag, std::ostream& out, std::ostream& err) {
  KeyValueConfig kv = spec.effective("");
  if (!challenge_flag.empty()) kv.set("generate.challenge", challenge_flag);
  const std::string challenge = required(kv, "generate.challenge", "cabc or pathfinder");
  if (spec.seed) kv.set(challenge + ".seed", std::to_string(*spec.seed));
  require(!spec.out.empty(), "generate: --out is required");

  // Flags are recorded under generate.* and mapped onto the challenge's keys.
  auto move_key = [&](const std::string& from, const std::string& to) {
    if (kv.contains(from)) kv.set(to, kv.get(from));
  };
  DatasetSummary summary;
  KeyValueConfig snapshot;
  snapshot.set("generate.challenge", challenge);
  if (challenge == "cabc") {
    for (const char* k : {"difficulty", "control", "task", "count", "val_count", "image_size"})
      move_key(std::string("generate.") + k, std::string("cabc.") + k);
    require(!kv.contains("generate.length"), "generate: --length applies to pathfinder only");
    CabcParams p = CabcParams::read(kv);
    p.workers = spec.workers;
    p.validate();
    p.write(snapshot);
    warn_unused(kv, err);
    summary = generate_cabc_dataset(spec.out, p);
  } else if (challenge == "pathfinder") {
    for (const char* k : {"task", "count", "val_count", "image_size"})
      move_key(std::string("generate.") + k, std::string("pathfinder.") + k);
    if (kv.contains("generate.difficulty"))
      kv.set("pathfinder.path_length", difficulty_length(kv.get("generate.difficulty")));
    move_key("generate.length", "pathfinder.path_length");
    if (kv.contains("generate.control") && kv.get("generate.control") != "none")
      throw ContractError("generate: --control applies to cabc only");
    PathfinderParams p = PathfinderParams::read(kv);
    p.workers = spec.workers;
    p.validate();
    p.write(snapshot);
    warn_unused(kv, err);
    summary = generate_pathfinder_dataset(spec.out, p);
  } else {
    throw ContractError("generate: unknown challenge '" + challenge + "' (cabc, pathfinder)");
  }
  write_snapshot(spec.out, snapshot);
  out << "wrote " << summary.train_count << " train / " << summary.val_count << " val images to "
      << summary.directory.string() << "\n"
      << "same-label: " << summary.train_same << " train, " << summary.val_same << " val\n"
      << "digest " << summary.digest << '\n';
  return kExitOk;
}

// --- train / sweep -----------------------------------------------------------

struct TrainingInputs {
  KeyValueConfig kv;
  DatasetSplit train, val;
  ArchitectureConfig arch;
  TrainConfig cfg;
};

TrainingInputs training_inputs(const RunSpec& spec) {
  TrainingInputs in;
  in.kv = spec.effective("train.seed");
  const fs::path data = required(in.kv, "data.dir", "--data");
  in.train = load_split(data, "train");
  in.val = load_split(data, "val");
  in.arch = model_for(in.kv, in.train);
  in.cfg = TrainConfig::read(in.kv);
  in.cfg.workers = spec.workers;
  return in;
}

KeyValueConfig training_snapshot(const TrainingInputs& in) {
  KeyValueConfig snap;
  snap.set("data.dir", in.kv.get("data.dir"));
  if (in.kv.contains("train.init")) snap.set("train.init", in.kv.get("train.init"));
  in.arch.write(snap);
  in.cfg.write(snap);
  return snap;
}

int cmd_train(const RunSpec& spec, std::ostream& out, std::ostream& err) {
  TrainingInputs in = training_inputs(spec);
  require(!spec.out.empty(), "train: --out is required");
  ModelState<float> model = [&] {
    if (in.kv.contains("train.init")) {
      auto m = load_checkpoint<float>(in.kv.get("train.init"));
      require(m.config == in.arch, "train: initial checkpoint architecture differs from the requested model");
      return m;
    }
    Rng init(model_seed(in.cfg.seed));
    return build_model<float>(in.arch, init);
  }();
  warn_unused(in.kv, err);
  const RunResult r = train(model, in.train, in.val, in.cfg, in.cfg.learning_rate, in.cfg.seed, spec.out, &out);
  const Evaluation ev = evaluate(model, in.val, in.cfg.batch_size);
  write_scores(spec.out / "val_scores.csv", ev);
  // Overwrites the harness snapshot with one that also names the data.
  write_snapshot(spec.out, training_snapshot(in));
  print_run(out, r);
  return kExitOk;
}

int cmd_sweep(const RunSpec& spec, std::ostream& out, std::ostream& err) {
  TrainingInputs in = training_inputs(spec);
  require(!spec.out.empty(), "sweep: --out is required");
  warn_unused(in.kv, err);
  write_snapshot(spec.out, training_snapshot(in));
  const SweepResult s = sweep(in.arch, in.train, in.val, in.cfg, spec.out, &out);
  for (const auto& r : s.runs) print_run(out, r);
  if (!s.any_ok()) {
    err << "sweep: every run failed\n";
    return kExitError;
  }
  out << "best: " << run_name(s.runs[s.best].learning_rate, s.runs[s.best].seed) << " val metric "
      << format_double(s.runs[s.best].best_val_metric) << '\n';
  return kExitOk;
}

int cmd_strain(const RunSpec& spec, std::ostream& out, std::ostream& err) {
  KeyValueConfig kv = spec.effective("train.seed");
  require(!spec.out.empty(), "strain: --out is required");
  const auto datasets = named_paths(required(kv, "strain.datasets", "--dataset"), "strain.datasets");
  std::vector<Variant> variants;
  for (const auto& v : split_list(kv.get_or("strain.variants", "tdh,td,h,bu"))) variants.push_back(parse_variant(v));
  ArchitectureConfig base = ArchitectureConfig::read(kv);
  TrainConfig cfg = TrainConfig::read(kv);
  cfg.workers = spec.workers;
  warn_unused(kv, err);

  KeyValueConfig snap;
  snap.set("strain.datasets", kv.get("strain.datasets"));
  snap.set("strain.variants", kv.get_or("strain.variants", "tdh,td,h,bu"));
  base.write(snap);
  cfg.write(snap);
  write_snapshot(spec.out, snap);

  const auto table = straining_sweep(variants, datasets, base, cfg, spec.out, &out);
  for (std::size_t v = 0; v < table.variants.size(); ++v) {
    out << table.variants[v];
    for (std::size_t d = 0; d < table.difficulties.size(); ++d)
      out << "  " << table.difficulties[d] << " " << format_double(table.at(v, d).best_val_metric);
    out << '\n';
  }
  return kExitOk;
}

// --- eval / trace ------------------------------------------------------------

int cmd_eval(const RunSpec& spec, std::ostream& out, std::ostream& err) {
  KeyValueConfig kv = spec.effective("");
  require(!spec.out.empty(), "eval: --out is required");
  const fs::path ckpt = required(kv, "checkpoint.dir", "--checkpoint");
  const fs::path data = required(kv, "data.dir", "--data");
  const std::string split_name = kv.get_or("data.split", "val");
  const std::size_t batch = kv.get_size("eval.batch_size", 32);
  warn_unused(kv, err);
  auto model = load_checkpoint<float>(ckpt);
  const DatasetSplit split = load_split(data, split_name);
  const Evaluation ev = evaluate(model, split, batch);
  write_scores(spec.out / "scores.csv", ev);
  nlohmann::json j{{"task", task_name(ev.task)}, {"images", ev.images.size()}, {"loss", ev.loss},
                   {"accuracy", ev.accuracy},    {"f1", ev.f1},                {"metric", ev.metric()}};
  std::ofstream(spec.out / "eval.json") << j.dump(2) << '\n';
  KeyValueConfig snap;
  snap.set("checkpoint.dir", ckpt.string());
  snap.set("data.dir", data.string());
  snap.set("data.split", split_name);
  snap.set("eval.batch_size", std::to_string(batch));
  write_snapshot(spec.out, snap);
  out << split_name << ": " << ev.images.size() << " images, loss " << format_double(ev.loss) << ", "
      << (ev.task == Task::classification ? "accuracy " : "pixel f1 ") << format_double(ev.metric()) << '\n';
  return kExitOk;
}

int cmd_trace(const RunSpec& spec, std::ostream& out, std::ostream& err) {
  KeyValueConfig kv = spec.effective("");
  require(!spec.out.empty(), "trace: --out is required");
  const fs::path ckpt = required(kv, "checkpoint.dir", "--checkpoint");
  const fs::path data = required(kv, "data.dir", "--data");
  const std::string split_name = kv.get_or("data.split", "val");
  const std::size_t count = kv.get_size("trace.count", 4);
  const std::size_t scale = kv.get_size("trace.scale", 2);
  warn_unused(kv, err);
  require(count >= 1 && scale >= 1, "trace: count and scale must be positive");

  auto model = load_checkpoint<float>(ckpt);
  const DatasetSplit split = load_split(data, split_name);
  require(split.image_size == model.config.image_size, "trace: dataset image size differs from the model's");
  const std::size_t n = std::min(count, split.size());
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  ForwardTrace<float> trace;
  predict(model, batch_images<float>(split, idx), &trace);
  if (trace.h1.size() < 2)
    err << "warning: the model runs a single timestep; each image gets one empty difference panel\n";

  fs::create_directories(spec.out);
  nlohmann::json index = nlohmann::json::array();
  const std::size_t S = split.image_size;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<Tensor<float>> maps = timecourse_maps(trace, k);
    if (maps.empty()) maps.emplace_back(Shape{S, S});
    double limit = 0;
    for (const auto& m : maps) limit = std::max(limit, max_abs(m));
    std::vector<RgbImage> panels;
    GrayImage input(S, S);
    input.pixels = split.images[idx[k]];
    panels.push_back(to_rgb(input, scale));
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t t = 0; t < maps.size(); ++t) {
      const auto& m = maps[t];
      std::vector<double> v(m.values().begin(), m.values().end());
      panels.push_back(heatmap(v, m.dim(1), m.dim(0), limit, true, scale));
      const std::string name = split.ids[idx[k]] + "_t" + std::to_string(t + 1) + ".bin";
      save_tensor(spec.out / name, m);
      files.push_back(name);
    }
    const std::string png = split.ids[idx[k]] + ".png";
    write_png(spec.out / png, hconcat(panels, 4));
    index.push_back({{"image_id", split.ids[idx[k]]}, {"panels", maps.size()}, {"limit", limit}, {"png", png},
                     {"maps", files}});
  }
  std::ofstream(spec.out / "trace.json") << index.dump(2) << '\n';
  KeyValueConfig snap;
  snap.set("checkpoint.dir", ckpt.string());
  snap.set("data.dir", data.string());
  snap.set("data.split", split_name);
  snap.set("trace.count", std::to_string(count));
  snap.set("trace.scale", std::to_string(scale));
  write_snapshot(spec.out, snap);
  out << "traced " << n << " images over " << trace.h1.size() << " timesteps into " << spec.out.string() << '\n';
  return kExitOk;
}

// --- analyze -----------------------------------------------------------------

int cmd_analyze(const RunSpec& spec, std::ostream& out, std::ostream& err) {
  KeyValueConfig kv = spec.effective("analysis.seed");
  require(!spec.out.empty(), "analyze: --out is required");
  const fs::path trials_path = required(kv, "analysis.trials", "--trials");
  const auto model_paths = named_paths(required(kv, "analysis.models", "--model"), "analysis.models");
  ConsistencyOptions opt;
  opt.ceiling.repeats = kv.get_size("analysis.repeats", opt.ceiling.repeats);
  opt.ceiling.percentile = kv.get_or("analysis.percentile", opt.ceiling.percentile);
  opt.ceiling.seed = kv.get_or("analysis.seed", opt.ceiling.seed);
  opt.bootstrap_iterations = kv.get_size("analysis.iterations", opt.bootstrap_iterations);
  opt.min_rt_ms = kv.get_or("analysis.min_rt_ms", opt.min_rt_ms);
  warn_unused(kv, err);

  const auto trials = read_trials(trials_path);
  std::vector<std::pair<std::string, std::vector<ModelScore>>> models;
  for (const auto& [name, path] : model_paths) models.emplace_back(name, read_model_scores(path));
  const auto rep = consistency_report(trials, models, opt);
  write_report(spec.out, rep);

  KeyValueConfig snap;
  snap.set("analysis.trials", trials_path.string());
  snap.set("analysis.models", kv.get("analysis.models"));
  snap.set("analysis.repeats", std::to_string(opt.ceiling.repeats));
  snap.set("analysis.percentile", format_double(opt.ceiling.percentile));
  snap.set("analysis.seed", std::to_string(opt.ceiling.seed));
  snap.set("analysis.iterations", std::to_string(opt.bootstrap_iterations));
  snap.set("analysis.min_rt_ms", format_double(opt.min_rt_ms));
  write_snapshot(spec.out, snap);

  out << "trials " << rep.trials_kept << "/" << rep.trials_in << " kept, " << rep.images << " images, ceiling "
      << format_double(rep.ceiling.ceiling) << '\n';
  for (const auto& m : rep.models) {
    out << m.name << ": " << ConsistencyReport::pair_text(m);
    if (m.explained.fraction) out << "  explained " << format_double(*m.explained.fraction);
    if (m.partial.control_constant) out << "  (constant control, plain correlation)";
    out << '\n';
  }
  for (const auto& c : rep.comparisons) out << c.a << " vs " << c.b << ": p = " << format_double(c.result.p) << '\n';
  return kExitOk;
}

}  // namespace

KeyValueConfig RunSpec::effective(const std::string& seed_key) const {
  KeyValueConfig kv = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
  for (const auto& s : flag_settings) kv.apply_override(s);
  for (const auto& s : overrides) kv.apply_override(s);
  if (seed && !seed_key.empty()) kv.set(seed_key, std::to_string(*seed));
  return kv;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, out, err);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Perceptual grouping challenges: stimulus generation, recurrent network training and analysis",
               "pgroup"};
  app.require_subcommand(1);
  RunSpec spec;
  std::string challenge;

  auto* gen = app.add_subcommand("generate", "Generate a cABC or Pathfinder dataset");
  add_common(gen, spec);
  gen->add_option("challenge", challenge, "cabc or pathfinder")->check(CLI::IsMember({"cabc", "pathfinder"}));
  keyed<std::string>(gen, spec, "--difficulty", "generate.difficulty", "easy, intermediate or hard");
  keyed<std::string>(gen, spec, "--control", "generate.control", "cabc control: none, luminance or positional");
  keyed<std::string>(gen, spec, "--task", "generate.task", "classification or segmentation");
  keyed<std::size_t>(gen, spec, "--length", "generate.length", "pathfinder path length in dashes");
  keyed<std::size_t>(gen, spec, "--count", "generate.count", "total images (train + val)");
  keyed<std::size_t>(gen, spec, "--val-count", "generate.val_count", "held-out images");
  keyed<std::size_t>(gen, spec, "--image-size", "generate.image_size", "image side in pixels");

  auto training_flags = [&](CLI::App* cmd) {
    add_common(cmd, spec);
    keyed<std::string>(cmd, spec, "--data", "data.dir", "dataset directory");
    keyed<std::string>(cmd, spec, "--variant", "model.variant", "tdh, td, h or bu");
    keyed<std::size_t>(cmd, spec, "--timesteps", "model.timesteps", "unrolled timesteps");
    keyed<std::size_t>(cmd, spec, "--batch-size", "train.batch_size", "batch size");
    keyed<std::size_t>(cmd, spec, "--epochs", "train.max_epochs", "maximum epochs");
    keyed<std::size_t>(cmd, spec, "--patience", "train.patience", "early-stopping patience in epochs");
  };
  auto* tr = app.add_subcommand("train", "Train one network");
  training_flags(tr);
  keyed<double>(tr, spec, "--lr", "train.learning_rate", "learning rate");
  keyed<std::string>(tr, spec, "--init", "train.init", "start from this checkpoint");

  auto* sw = app.add_subcommand("sweep", "Train the learning-rate by seed grid");
  training_flags(sw);
  keyed<std::string>(sw, spec, "--lrs", "train.learning_rates", "comma-separated learning rates");
  keyed<std::size_t>(sw, spec, "--seeds", "train.seeds", "seeds per learning rate");

  auto* st = app.add_subcommand("strain", "Sweep several variants on several difficulty datasets");
  add_common(st, spec);
  std::vector<std::string> datasets;
  st->add_option("--dataset", datasets, "difficulty=directory; repeatable, in table order");
  keyed<std::string>(st, spec, "--variants", "strain.variants", "comma-separated variants");
  keyed<std::size_t>(st, spec, "--timesteps", "model.timesteps", "unrolled timesteps");
  keyed<std::string>(st, spec, "--lrs", "train.learning_rates", "comma-separated learning rates");
  keyed<std::size_t>(st, spec, "--seeds", "train.seeds", "seeds per learning rate");
  keyed<std::size_t>(st, spec, "--epochs", "train.max_epochs", "maximum epochs");
  keyed<std::size_t>(st, spec, "--patience", "train.patience", "early-stopping patience in epochs");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  add_common(ev, spec);
  keyed<std::string>(ev, spec, "--checkpoint", "checkpoint.dir", "checkpoint directory");
  keyed<std::string>(ev, spec, "--data", "data.dir", "dataset directory");
  keyed<std::string>(ev, spec, "--split", "data.split", "train or val");

  auto* tc = app.add_subcommand("trace", "Render per-timestep changes of the horizontal state");
  add_common(tc, spec);
  keyed<std::string>(tc, spec, "--checkpoint", "checkpoint.dir", "checkpoint directory");
  keyed<std::string>(tc, spec, "--data", "data.dir", "dataset directory");
  keyed<std::string>(tc, spec, "--split", "data.split", "train or val");
  keyed<std::size_t>(tc, spec, "--count", "trace.count", "images to trace from the start of the split");

  auto* an = app.add_subcommand("analyze", "Human-model consistency statistics");
  add_common(an, spec);
  std::vector<std::string> model_scores;
  keyed<std::string>(an, spec, "--trials", "analysis.trials", "trial CSV file");
  an->add_option("--model", model_scores, "name=scores.csv; repeatable");
  keyed<std::size_t>(an, spec, "--repeats", "analysis.repeats", "split-half repeats");
  keyed<std::size_t>(an, spec, "--iterations", "analysis.iterations", "bootstrap iterations");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  if (!datasets.empty()) spec.flag_settings.push_back("strain.datasets=" + join(datasets));
  if (!model_scores.empty()) spec.flag_settings.push_back("analysis.models=" + join(model_scores));

  try {
    if (gen->parsed()) return cmd_generate(spec, challenge, out, err);
    if (tr->parsed()) return cmd_train(spec, out, err);
    if (sw->parsed()) return cmd_sweep(spec, out, err);
    if (st->parsed()) return cmd_strain(spec, out, err);
    if (ev->parsed()) return cmd_eval(spec, out, err);
    if (tc->parsed()) return cmd_trace(spec, out, err);
    if (an->parsed()) return cmd_analyze(spec, out, err);
  } catch (const AuditError& e) {
    err << "audit failed: " << e.what() << '\n';
    return kExitAudit;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}

}  // namespace pgroup::cli
