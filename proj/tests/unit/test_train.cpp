#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "pgroup/checkpoint.hpp"
#include "pgroup/train.hpp"
#include "support/toy.hpp"

using namespace pgroup;
using pgroup::testing::tiny_architecture;
using pgroup::testing::toy_split;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("pgroup_test_train_" + name);
  std::filesystem::remove_all(p);
  return p;
}

TrainConfig quick_config(std::size_t max_epochs = 3) {
  TrainConfig c;
  c.batch_size = 16;
  c.max_epochs = max_epochs;
  c.patience = max_epochs - 1;
  return c;
}

ModelState<float> fresh_model(const ArchitectureConfig& a, std::uint64_t seed) {
  Rng rng(model_seed(seed));
  return build_model<float>(a, rng);
}

}  // namespace

TEST_CASE("early stopping after eleven epochs without improvement") {
  EarlyStopper s(10, 48);
  std::size_t epochs = 0;
  while (!s.update(1.0)) ++epochs;
  CHECK(s.epochs() == 11);
  CHECK(s.reason() == StopReason::patience);
}

TEST_CASE("early stopping runs to the epoch cap while improving") {
  EarlyStopper s(10, 48);
  double v = 10;
  while (!s.update(v)) v *= 0.99;
  CHECK(s.epochs() == 48);
  CHECK(s.reason() == StopReason::max_epochs);
}

TEST_CASE("early stopping counts from the last strict improvement") {
  EarlyStopper s(3, 48);
  CHECK_FALSE(s.update(5));
  CHECK_FALSE(s.update(4));
  CHECK_FALSE(s.update(4));  // equal is not an improvement
  CHECK_FALSE(s.update(6));
  CHECK(s.since_improvement() == 2);
  CHECK_FALSE(s.update(3.5));
  CHECK(s.since_improvement() == 0);
  CHECK_FALSE(s.update(std::numeric_limits<double>::quiet_NaN()));
  CHECK_FALSE(s.update(9));
  CHECK(s.update(9));
  CHECK(s.epochs() == 8);
  CHECK(s.best() == 3.5);
  CHECK_THROWS_AS(EarlyStopper(10, 10), ContractError);
}

TEST_CASE("train config validates and round trips") {
  TrainConfig c;
  CHECK(c.learning_rates.size() * c.seeds == 20);
  CHECK(c.batch_size == 32);
  c.learning_rates = {0.5, 2e-7};
  c.seeds = 2;
  c.workers = 3;
  KeyValueConfig kv;
  c.write(kv);
  const auto d = TrainConfig::read(kv);
  CHECK(d.learning_rates == c.learning_rates);
  CHECK(d.seeds == 2);
  CHECK(d.workers == 3);
  kv.set("train.patience", "48");
  CHECK_THROWS_AS(TrainConfig::read(kv), ContractError);
  kv.set("train.patience", "10");
  kv.set("train.learning_rates", "1e-3,abc");
  CHECK_THROWS_AS(TrainConfig::read(kv), ContractError);
}

TEST_CASE("pixel f1 edge cases and a hand-computed value") {
  const std::vector<float> target{1, 1, 0, 0, 1, 0};
  const std::vector<float> perfect{3, 2, -1, -4, 0.5f, -0.1f};
  CHECK(pixel_f1(perfect, target) == 1.0);
  const std::vector<float> background(6, -1.0f);
  CHECK(pixel_f1(background, target) == 0.0);
  const std::vector<float> empty_target(6, 0.0f);
  CHECK(pixel_f1(background, empty_target) == 1.0);
  // tp = 2, fp = 1, fn = 1.
  const std::vector<float> mixed{1, 1, 1, -1, -1, -1};
  CHECK(pixel_f1(mixed, target) == doctest::Approx(2.0 * 2 / (2 * 2 + 1 + 1)));
}

TEST_CASE("cross-entropy value matches the direct formula") {
  const std::vector<float> logits{-30, -2, 0, 0.5f, 7, 40};
  const std::vector<float> targets{0, 1, 1, 0, 1, 1};
  double expect = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const long double p = 1.0L / (1.0L + std::exp(-(long double)logits[i]));
    expect += double(-(targets[i] * std::log(p) + (1 - targets[i]) * std::log1p(-p)));
  }
  CHECK(bce_with_logits_value(logits, targets) == doctest::Approx(expect / 6).epsilon(1e-12));
}

TEST_CASE("evaluation accuracy matches a recount of logits") {
  const auto arch = tiny_architecture(Variant::bu);
  auto model = fresh_model(arch, 3);
  const auto split = toy_split(8, 50, 11);
  const Evaluation ev = evaluate(model, split, 7);
  REQUIRE(ev.images.size() == 50);

  std::vector<std::size_t> all(50);
  for (std::size_t i = 0; i < 50; ++i) all[i] = i;
  const Tensor<float> logits = predict(model, batch_images<float>(split, all));
  std::size_t correct = 0;
  double loss = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    const bool ok = (logits[i] > 0) == (split.labels[i] == 1);
    correct += ok;
    CHECK(ev.images[i].correct == ok);
    CHECK(ev.images[i].id == split.ids[i]);
    CHECK(ev.images[i].logit == doctest::Approx(logits[i]).epsilon(1e-6));
    const double x = logits[i], y = split.labels[i];
    loss += y * std::log1p(std::exp(-x)) + (1 - y) * std::log1p(std::exp(x));
  }
  CHECK(ev.accuracy == double(correct) / 50);
  CHECK(ev.metric() == ev.accuracy);
  CHECK(ev.loss == doctest::Approx(loss / 50).epsilon(1e-6));

  DatasetSplit empty;
  empty.image_size = 8;
  CHECK_THROWS_AS(evaluate(model, empty, 4), ContractError);
}

TEST_CASE("segmentation evaluation pools pixel f1") {
  auto arch = tiny_architecture(Variant::bu);
  arch.task = Task::segmentation;
  auto model = fresh_model(arch, 4);
  DatasetSplit split;
  split.image_size = 8;
  split.segmentation = true;
  for (int i = 0; i < 6; ++i) {
    const auto s = pgroup::testing::toy_sample(8, 2, std::uint64_t(i));
    split.ids.push_back(image_id(std::uint64_t(i)));
    split.labels.push_back(s.label);
    split.images.push_back(s.image.pixels);
    std::vector<std::uint8_t> t(64, 0);
    for (int k = 0; k <= i; ++k) t[std::size_t(k * 9)] = 255;
    split.targets.push_back(t);
  }
  const Evaluation ev = evaluate(model, split, 4);
  std::vector<std::size_t> all{0, 1, 2, 3, 4, 5};
  const Tensor<float> logits = predict(model, batch_images<float>(split, all));
  const Tensor<float> targets = batch_targets<float>(split, all);
  CHECK(ev.f1 == doctest::Approx(pixel_f1(logits.values(), targets.values())));
  CHECK(ev.metric() == ev.f1);
  for (std::size_t i = 0; i < 6; ++i) {
    const double f = pixel_f1(logits.values().subspan(i * 64, 64), targets.values().subspan(i * 64, 64));
    CHECK(ev.images[i].f1 == doctest::Approx(f));
    CHECK(ev.images[i].correct == (f > 0.6));
  }
}

TEST_CASE("bottom-up network learns the two-pixel toy within five epochs") {
  const auto arch = tiny_architecture(Variant::bu);
  const auto train_split = toy_split(8, 512, 21);
  const auto val_split = toy_split(8, 200, 22);
  auto model = fresh_model(arch, 0);
  TrainConfig cfg = quick_config(5);
  cfg.batch_size = 32;
  const RunResult r = train(model, train_split, val_split, cfg, 1e-2, 0);
  INFO("best val accuracy " << r.best_val_metric);
  CHECK(r.epochs.size() <= 5);
  CHECK(r.best_val_metric >= 0.99);
  // The model holds the best-epoch weights.
  CHECK(evaluate(model, val_split, 32).accuracy == r.best_val_metric);
}

TEST_CASE("rerunning a cell reproduces the loss curve bit for bit") {
  const auto arch = tiny_architecture(Variant::td_h);
  const auto train_split = toy_split(8, 70, 5);  // last batch partial
  const auto val_split = toy_split(8, 20, 6);
  auto run = [&](std::uint64_t seed) {
    auto model = fresh_model(arch, seed);
    return train(model, train_split, val_split, quick_config(2), 1e-3, seed);
  };
  const auto a = run(7), b = run(7), c = run(8);
  REQUIRE(a.batch_losses.size() == 2 * 5);
  CHECK(a.batch_losses == b.batch_losses);
  CHECK(a.batch_losses != c.batch_losses);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  const auto arch = tiny_architecture(Variant::bu);
  auto model = fresh_model(arch, 1);
  model.readout2.bias[0] = std::numeric_limits<float>::quiet_NaN();
  const auto split = toy_split(8, 20, 1);
  try {
    train(model, split, split, quick_config(), 1e-3, 0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 1 batch 1") != std::string::npos);
  }
}

TEST_CASE("run directory holds config, metrics, losses, checkpoint and result") {
  const auto dir = scratch("run");
  const auto arch = tiny_architecture(Variant::h);
  const auto train_split = toy_split(8, 40, 8);
  const auto val_split = toy_split(8, 20, 9);
  auto model = fresh_model(arch, 2);
  const auto r = train(model, train_split, val_split, quick_config(3), 1e-3, 2, dir);
  CHECK(std::filesystem::exists(dir / "config.txt"));
  CHECK(KeyValueConfig::load(dir / "config.txt").get("model.variant") == "h");

  std::ifstream metrics(dir / "metrics.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(metrics, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch") == n + 1);
    CHECK(j.at("val_metric").get<double>() == r.epochs[n].val_metric);
    ++n;
  }
  CHECK(n == r.epochs.size());

  std::ifstream losses(dir / "losses.txt");
  std::size_t k = 0;
  while (std::getline(losses, line)) {
    CHECK(std::strtof(line.c_str(), nullptr) == r.batch_losses.at(k));
    ++k;
  }
  CHECK(k == r.batch_losses.size());

  auto loaded = load_checkpoint<float>(dir / "best");
  CHECK(evaluate(loaded, val_split, 16).accuracy == r.best_val_metric);
  const auto result = nlohmann::json::parse(std::ifstream(dir / "result.json"));
  CHECK(result.at("best_epoch") == r.best_epoch);
  CHECK(r.epochs.at(r.best_epoch - 1).val_metric == r.best_val_metric);
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep covers the grid, isolates failures and selects the best run") {
  const auto dir = scratch("sweep");
  const auto arch = tiny_architecture(Variant::bu);
  const auto train_split = toy_split(8, 32, 12);
  const auto val_split = toy_split(8, 16, 13);
  TrainConfig cfg = quick_config(2);
  cfg.patience = 1;
  cfg.workers = 2;
  const SweepResult s = sweep(arch, train_split, val_split, cfg, dir);
  REQUIRE(s.runs.size() == 20);
  std::size_t dirs = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) dirs += e.is_directory();
  CHECK(dirs == 20);
  double best = -1;
  for (const auto& r : s.runs) {
    CHECK(r.ok());
    best = std::max(best, r.best_val_metric);
  }
  CHECK(s.runs[s.best].best_val_metric == best);
  CHECK(s.runs[0].learning_rate == 1e-3);
  CHECK(s.runs[19].learning_rate == 1e-6);
  CHECK(s.runs[19].seed == 4);

  cfg.workers = 1;
  cfg.seeds = 1;
  cfg.save_checkpoints = false;
  const SweepResult again = sweep(arch, train_split, val_split, cfg);
  CHECK(again.runs[0].batch_losses == s.runs[0].batch_losses);

  // A NaN-producing learning rate fails its own cells only.
  cfg.learning_rates = {1e-3, 1e30};
  const SweepResult mixed = sweep(arch, train_split, val_split, cfg);
  REQUIRE(mixed.runs.size() == 2);
  CHECK(mixed.runs[0].ok());
  CHECK_FALSE(mixed.runs[1].ok());
  CHECK(mixed.best == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("straining table has one traceable cell per variant and difficulty") {
  const auto dir = scratch("strain");
  pgroup::testing::write_toy_dataset(dir / "data_a", 8, 24, 12, 1);
  pgroup::testing::write_toy_dataset(dir / "data_b", 8, 24, 12, 2);
  TrainConfig cfg = quick_config(2);
  cfg.patience = 1;
  cfg.learning_rates = {1e-3, 1e-4};
  cfg.seeds = 1;
  const auto table = straining_sweep({Variant::h, Variant::bu}, {{"easy", dir / "data_a"}, {"hard", dir / "data_b"}},
                                     tiny_architecture(Variant::td_h), cfg, dir / "out");
  CHECK(table.cells.size() == 4);
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t d = 0; d < 2; ++d) {
      const auto& c = table.at(v, d);
      CHECK(c.variant == table.variants[v]);
      CHECK(c.difficulty == table.difficulties[d]);
      const auto result = nlohmann::json::parse(std::ifstream(c.run_dir / "result.json"));
      CHECK(result.at("best_val_metric").get<double>() == c.best_val_metric);
    }
  CHECK(std::filesystem::exists(dir / "out" / "straining.csv"));
  CHECK(std::filesystem::exists(dir / "out" / "straining.png"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("time-course maps difference per-pixel state norms") {
  ForwardTrace<float> trace;
  Rng rng(4);
  for (int t = 0; t < 4; ++t) {
    Tensor<float> h(Shape{2, 3, 4, 5});
    for (auto& v : h.values()) v = float(uniform(rng, -1, 1));
    trace.h1.push_back(h);
  }
  trace.h1.push_back(trace.h1.back());
  const auto maps = timecourse_maps(trace, 1);
  REQUIRE(maps.size() == 4);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 5; ++x) {
        auto norm = [&](const Tensor<float>& h) {
          double a = 0;
          for (std::size_t c = 0; c < 3; ++c) a += std::pow(double(h.at(1, c, y, x)), 2);
          return std::sqrt(a);
        };
        CHECK(maps[t][y * 5 + x] == doctest::Approx(norm(trace.h1[t + 1]) - norm(trace.h1[t])).epsilon(1e-6));
      }
  for (float v : maps[3].values()) CHECK(v == 0.0f);
  trace.h1.resize(1);
  CHECK(timecourse_maps(trace, 0).empty());
}
