#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pgroup/analysis.hpp"
#include "pgroup/architecture.hpp"
#include "pgroup/cabc.hpp"
#include "pgroup/checkpoint.hpp"
#include "pgroup/cli.hpp"
#include "pgroup/fgru.hpp"
#include "pgroup/gradcheck.hpp"
#include "pgroup/pathfinder.hpp"
#include "pgroup/serialize.hpp"
#include "pgroup/train.hpp"
#include "support/random.hpp"
#include "support/toy.hpp"

using namespace pgroup;
using pgroup::testing::random_away_from_zero;
using pgroup::testing::random_tensor;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

enum class Status { pass, fail, skipped };

struct Outcome {
  Status status = Status::pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Collects named sub-checks; the criterion fails if any of them fails.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  Outcome outcome() const {
    Outcome o;
    o.status = failures_.empty() ? Status::pass : Status::fail;
    std::string text;
    for (const auto& n : notes_) text += (text.empty() ? "" : "; ") + n;
    for (const auto& f : failures_) text += (text.empty() ? "failed: " : "; failed: ") + f;
    o.detail = text;
    return o;
  }

 private:
  std::vector<std::string> notes_, failures_;
};

unsigned worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---------------------------------------------------------------------------
// 1. Gradient fidelity

constexpr double kGradTolerance = 1e-5;

std::vector<Tensor<double>*> fgru_parameters(FGruParams<double>& p) {
  std::vector<Tensor<double>*> out;
  p.visit_parameters([&](const std::string&, Tensor<double>& t) { out.push_back(&t); });
  return out;
}

FGruParams<double> random_fgru(const FGruConfig& cfg, std::mt19937_64& rng) {
  Rng init_rng(rng());
  FGruParams<double> p = init_fgru<double>(cfg, init_rng);
  for (Tensor<double>* t : fgru_parameters(p)) *t = random_tensor(t->shape(), rng, -0.8, 0.8);
  for (auto& sites : p.bn)
    for (auto& s : sites) s.scale = random_tensor(s.scale.shape(), rng, 0.5, 1.5);
  return p;
}

Outcome gradient_fidelity() {
  const auto start = Clock::now();
  std::map<std::string, double> worst;
  std::set<std::string> failed;
  auto record = [&](const std::string& name, const GradCheckResult& r) {
    worst[name] = std::max(worst[name], r.max_relative_error);
    if (!r.passed || r.max_relative_error > kGradTolerance) failed.insert(name);
  };
  const GradCheckOptions opts{1e-4, kGradTolerance, true};
  using Fn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;
  auto check = [&](const std::string& name, const Fn& fn, const std::vector<Tensor<double>>& in) {
    record(name, check_gradients(fn, in, opts));
  };

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(7000 + seed);
    const std::size_t n = 1 + seed % 2, c = 1 + seed % 3, h = 2 + seed % 4, w = 2 + (seed / 2) % 4;
    const Shape s{n, c, h, w};
    const auto weights = random_tensor(s, rng);
    auto ws = [&](const Var<double>& v) { return weighted_sum(v, weights); };

    check("relu", [&](Tape<double>&, const std::vector<Var<double>>& in) { return ws(relu(in[0])); },
          {random_away_from_zero(s, rng)});
    check("sigmoid", [&](Tape<double>&, const std::vector<Var<double>>& in) { return ws(sigmoid(in[0])); },
          {random_tensor(s, rng, -3, 3)});
    check("scale", [&](Tape<double>&, const std::vector<Var<double>>& in) { return ws(scale(in[0], 1.7)); },
          {random_tensor(s, rng)});
    check("sum", [&](Tape<double>&, const std::vector<Var<double>>& in) { return sum(mul(in[0], in[0])); },
          {random_tensor(s, rng)});
    check("mean", [&](Tape<double>&, const std::vector<Var<double>>& in) { return mean(mul(in[0], in[0])); },
          {random_tensor(s, rng)});
    check("weighted_sum", [&](Tape<double>&, const std::vector<Var<double>>& in) { return ws(in[0]); },
          {random_tensor(s, rng)});
    for (bool channel : {false, true}) {
      const Shape rhs = channel ? Shape{c} : s;
      check("add", [&](Tape<double>&, const std::vector<Var<double>>& in) { return ws(add(in[0], in[1])); },
            {random_tensor(s, rng), random_tensor(rhs, rng)});
      check("sub", [&](Tape<double>&, const std::vector<Var<double>>& in) { return ws(sub(in[0], in[1])); },
            {random_tensor(s, rng), random_tensor(rhs, rng)});
      check("mul", [&](Tape<double>&, const std::vector<Var<double>>& in) { return ws(mul(in[0], in[1])); },
            {random_tensor(s, rng), random_tensor(rhs, rng)});
      check("mix",
            [&](Tape<double>&, const std::vector<Var<double>>& in) { return ws(mix(sigmoid(in[0]), in[1], in[2])); },
            {random_tensor(rhs, rng), random_tensor(s, rng), random_tensor(s, rng)});
    }

    Tensor<double> distinct(s);
    std::vector<double> levels(distinct.size());
    for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = 0.01 * double(i);
    std::shuffle(levels.begin(), levels.end(), rng);
    for (std::size_t i = 0; i < levels.size(); ++i) distinct[i] = levels[i];
    const auto pw = random_tensor({n, c, (h + 1) / 2, (w + 1) / 2}, rng);
    check("maxpool2", [&](Tape<double>&, const std::vector<Var<double>>& in) { return weighted_sum(maxpool2(in[0]), pw); },
          {distinct});
    const auto gw = random_tensor({n, c, 1, 1}, rng);
    check("global_max_pool",
          [&](Tape<double>&, const std::vector<Var<double>>& in) { return weighted_sum(global_max_pool(in[0]), gw); },
          {distinct});

    const std::size_t k = 1 + 2 * (seed % 2), cout = 1 + seed % 4;
    const auto cw = random_tensor({n, cout, h, w}, rng);
    check("conv2d",
          [&](Tape<double>&, const std::vector<Var<double>>& in) { return weighted_sum(conv2d(in[0], in[1], in[2]), cw); },
          {random_tensor(s, rng), random_tensor({cout, c, k, k}, rng), random_tensor({cout}, rng)});
    const auto tw = random_tensor({n, cout, 2 * h, 2 * w}, rng);
    check("conv2d_transpose",
          [&](Tape<double>&, const std::vector<Var<double>>& in) {
            return weighted_sum(conv2d_transpose(in[0], in[1], in[2]), tw);
          },
          {random_tensor(s, rng), random_tensor({c, cout, 4, 4}, rng), random_tensor({cout}, rng)});

    const Shape bs{n + 1, c, h, w};
    const auto bw = random_tensor(bs, rng);
    BatchNormStats<double> stats(c);
    check("batchnorm (train)",
          [&](Tape<double>&, const std::vector<Var<double>>& in) {
            BatchNormStats<double> local = stats;
            return weighted_sum(batchnorm(in[0], in[1], in[2], local, Mode::train), bw);
          },
          {random_tensor(bs, rng), random_tensor({c}, rng, 0.5, 1.5), random_tensor({c}, rng)});
    BatchNormStats<double> trained(c);
    {
      Tape<double> tape;
      batchnorm(tape.constant(random_tensor(bs, rng, -2, 2)), tape.constant(Tensor<double>({c}, 1.0)),
                tape.constant(Tensor<double>({c})), trained, Mode::train);
    }
    check("batchnorm (eval)",
          [&](Tape<double>&, const std::vector<Var<double>>& in) {
            return weighted_sum(batchnorm_eval(in[0], in[1], in[2], trained), bw);
          },
          {random_tensor(bs, rng), random_tensor({c}, rng, 0.5, 1.5), random_tensor({c}, rng)});

    Tensor<double> labels(s);
    for (auto& v : labels.values()) v = double(rng() % 2);
    check("bce_with_logits",
          [&](Tape<double>&, const std::vector<Var<double>>& in) { return bce_with_logits(in[0], labels); },
          {random_tensor(s, rng, -3, 3)});
    check("topdown_blend",
          [&](Tape<double>&, const std::vector<Var<double>>& in) { return ws(topdown_blend(in[0], in[1], in[2])); },
          {random_tensor(s, rng), random_tensor(s, rng), random_tensor({c}, rng, -2, 2)});

    // Full fGRU step: batch 2, 4 channels, 8x8, kernel 3.
    const FGruConfig cfg{4, 3, 1, 1, false};
    const FGruParams<double> base = random_fgru(cfg, rng);
    const auto fw = random_tensor({2, 4, 8, 8}, rng);
    std::vector<Tensor<double>> inputs{random_tensor({2, 4, 8, 8}, rng), random_tensor({2, 4, 8, 8}, rng, 0.0, 1.0)};
    FGruParams<double> scratch = base;
    for (Tensor<double>* t : fgru_parameters(scratch)) inputs.push_back(*t);
    check("fgru_step",
          [&](Tape<double>& tape, const std::vector<Var<double>>& in) {
            FGruParams<double> p = base;
            ParamBinder<double> bind(tape, false);
            auto params = fgru_parameters(p);
            for (std::size_t i = 0; i < params.size(); ++i) bind.set(*params[i], in[i + 2]);
            return weighted_sum(fgru_step(in[0], in[1], p, 0, Mode::train, bind), fw);
          },
          inputs);
  }

  const double elapsed = seconds_since(start);
  double max_err = 0;
  for (const auto& [name, e] : worst) max_err = std::max(max_err, e);
  Checks c;
  c.note(fmt("%zu primitives + fgru_step x 20 seeds, max rel err %.2e (<= 1e-05), %.1f s (<= 300 s)",
             worst.size() - 1, max_err, elapsed));
  for (const auto& name : failed) c.expect(false, name + fmt(" rel err %.2e", worst[name]));
  c.expect(elapsed <= 300, "runtime");
  return c.outcome();
}

// ---------------------------------------------------------------------------
// 2. fGRU invariants

struct StepOut {
  Tensor<double> h;
  FGruStepTrace<double> trace;
};

StepOut fgru_run(const Tensor<double>& x, const Tensor<double>& h_prev, FGruParams<double>& p, std::size_t t) {
  Tape<double> tape;
  ParamBinder<double> bind(tape, false);
  StepOut r;
  r.h = fgru_step(tape.constant(x), tape.constant(h_prev), p, t, Mode::train, bind, &r.trace).value();
  return r;
}

void identity_bn(BatchNormParams<double>& bn, double bias = 0.0) {
  for (auto& v : bn.scale.values()) v = 1.0;
  for (auto& v : bn.bias.values()) v = bias;
}

Outcome fgru_invariants() {
  constexpr int kInstances = 1000;
  const FGruConfig cfg{4, 3, 1, 2, false};
  std::size_t mix_ok = 0, supp_ok = 0, between_ok = 0;
  double mix_worst = 0;
  std::mt19937_64 rng(2024);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t t = std::size_t(i) % 2;
    {
      auto p = random_fgru(cfg, rng);
      for (auto& v : p.U_E.values()) v = 0.0;
      identity_bn(p.site(t, BnSite::mix_gate), -40.0);
      const auto x = random_tensor({2, 4, 8, 8}, rng);
      const auto h_prev = random_tensor({2, 4, 8, 8}, rng, 0.0, 1.0);
      const auto r = fgru_run(x, h_prev, p, t);
      double worst = 0;
      for (std::size_t k = 0; k < r.h.size(); ++k) worst = std::max(worst, std::abs(r.h[k] - h_prev[k]));
      mix_worst = std::max(mix_worst, worst);
      mix_ok += worst <= 1e-8;
    }
    {
      auto p = random_fgru(cfg, rng);
      for (auto& v : p.W_I.values()) v = 0.0;
      identity_bn(p.site(t, BnSite::suppression));
      const auto x = random_tensor({2, 4, 8, 8}, rng);
      const auto h_prev = random_tensor({2, 4, 8, 8}, rng);
      const auto r = fgru_run(x, h_prev, p, t);
      bool exact = true;
      for (std::size_t k = 0; k < x.size(); ++k) exact &= r.trace.z[k] == std::max(x[k], 0.0);
      supp_ok += exact;
    }
    {
      auto p = random_fgru(cfg, rng);
      const auto x = random_tensor({2, 4, 8, 8}, rng, -1.0, 2.0);
      const auto h_prev = random_tensor({2, 4, 8, 8}, rng, 0.0, 2.0);
      const auto r = fgru_run(x, h_prev, p, t);
      bool inside = true;
      for (std::size_t k = 0; k < r.h.size(); ++k) {
        const double lo = std::min(h_prev[k], r.trace.candidate[k]);
        const double hi = std::max(h_prev[k], r.trace.candidate[k]);
        const double slack = 1e-12 * std::max(1.0, hi);
        inside &= r.h[k] >= lo - slack && r.h[k] <= hi + slack;
      }
      between_ok += inside;
    }
  }
  Checks c;
  c.note(fmt("mix gate %zu/%d (max |H[t]-H[t-1]| %.1e), suppression %zu/%d exact, betweenness %zu/%d", mix_ok,
             kInstances, mix_worst, supp_ok, kInstances, between_ok, kInstances));
  c.expect(mix_ok == kInstances, "mix-gate identity");
  c.expect(supp_ok == kInstances, "suppression annihilation");
  c.expect(between_ok == kInstances, "betweenness");
  return c.outcome();
}

// ---------------------------------------------------------------------------
// 3. Lesions

template <class F>
void randomize_fgru(FGruParams<float>& p, std::mt19937_64& rng, F&& draw) {
  p.visit_parameters([&](const std::string&, Tensor<float>& t) { t = draw(t.shape(), rng); });
}

Outcome lesions() {
  Checks c;
  auto draw = [](const Shape& s, std::mt19937_64& rng) { return random_tensor<float>(s, rng, -1.0, 1.0); };
  std::size_t h_ok = 0;
  constexpr std::size_t kModels = 10;
  for (std::size_t seed = 0; seed < kModels; ++seed) {
    ArchitectureConfig a;
    a.variant = Variant::h;
    a.timesteps = 3;
    a.image_size = 32;
    Rng init(100 + seed);
    auto m = build_model<float>(a, init);
    std::mt19937_64 rng(200 + seed);
    const auto images = random_tensor<float>({2, 1, 32, 32}, rng, 0.0, 1.0);
    const auto before = predict(m, images);
    for (auto& l : m.ds) l.weight = draw(l.weight.shape(), rng), l.bias = draw(l.bias.shape(), rng);
    for (auto& l : m.us) l.weight = draw(l.weight.shape(), rng), l.bias = draw(l.bias.shape(), rng);
    for (auto* group : {&m.ds_bn, &m.us_bn})
      for (auto& per_t : *group)
        for (auto& b : per_t) b.scale = draw(b.scale.shape(), rng), b.bias = draw(b.bias.shape(), rng);
    for (auto& b : m.pool_bn) b.scale = draw(b.scale.shape(), rng), b.bias = draw(b.bias.shape(), rng);
    randomize_fgru(m.fgru2, rng, draw);
    if (m.fgru3) randomize_fgru(*m.fgru3, rng, draw);
    const auto after = predict(m, images);
    h_ok += before.size() == after.size() &&
            std::memcmp(before.values().data(), after.values().data(), before.size() * sizeof(float)) == 0;
  }
  c.note(fmt("H logits bit-identical after randomizing DS/US/fGRU2/fGRU3 in %zu/%zu models", h_ok, kModels));
  c.expect(h_ok == kModels, "H lesion");

  // TD at T=1: fGRU1 output may change only where its conv-block input changed.
  std::size_t probes = 0, local = 0;
  for (std::size_t seed = 0; seed < 5; ++seed) {
    ArchitectureConfig a;
    a.variant = Variant::td;
    a.timesteps = 1;
    a.image_size = 32;
    Rng init(300 + seed);
    auto m = build_model<double>(a, init);
    std::mt19937_64 rng(400 + seed);
    const auto images = random_tensor<double>({1, 1, 32, 32}, rng, 0.0, 1.0);
    auto conv_block = [&](const Tensor<double>& x) {
      Tape<double> tape;
      ParamBinder<double> bind(tape, false);
      return conv2d(relu(conv2d(tape.constant(x), bind(m.conv1.weight), bind(m.conv1.bias))), bind(m.conv2.weight),
                    bind(m.conv2.bias))
          .value();
    };
    ForwardTrace<double> base;
    predict(m, images, &base);
    const auto base_in = conv_block(images);
    for (int k = 0; k < 8; ++k) {
      auto bumped = images;
      const std::size_t py = rng() % 32, px = rng() % 32;
      bumped.at(0, 0, py, px) += 1.0;
      ForwardTrace<double> probe;
      predict(m, bumped, &probe);
      const auto in = conv_block(bumped);
      bool ok = true;
      bool changed_any = false;
      const auto& h0 = base.h1_horizontal.at(0);
      const auto& h1 = probe.h1_horizontal.at(0);
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
          bool in_changed = false, out_changed = false;
          for (std::size_t ch = 0; ch < in.dim(1); ++ch) in_changed |= in.at(0, ch, y, x) != base_in.at(0, ch, y, x);
          for (std::size_t ch = 0; ch < h0.dim(1); ++ch) out_changed |= h0.at(0, ch, y, x) != h1.at(0, ch, y, x);
          ok &= in_changed || !out_changed;
          changed_any |= out_changed;
        }
      ++probes;
      local += ok && changed_any;
    }
  }
  c.note(fmt("TD T=1 fGRU1 changes confined to the conv-block footprint in %zu/%zu probes", local, probes));
  c.expect(local == probes, "TD locality");
  return c.outcome();
}

// ---------------------------------------------------------------------------
// 4. Generator statistics

double variance(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= double(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size() - 1);
}

Outcome generator_statistics() {
  const auto start = Clock::now();
  Checks c;
  const std::array<double, 3> dtheta_lo{170, 110, 70};
  std::string ranges;
  for (auto d : {Difficulty::easy, Difficulty::intermediate, Difficulty::hard}) {
    Rng rng = make_rng(4, std::uint64_t(d));
    std::vector<double> rot1, rot2;
    double mn = 1e9, mx = -1e9;
    for (int i = 0; i < 100000; ++i) {
      const auto tp = sample_transform_params(d, rng);
      rot1.push_back(tp.phi1 + tp.phic);
      rot2.push_back(tp.phi2 + tp.phic);
      mn = std::min(mn, std::abs(tp.dtheta));
      mx = std::max(mx, std::abs(tp.dtheta));
    }
    const double v1 = variance(rot1), v2 = variance(rot2);
    const std::string name = difficulty_name(d);
    c.expect(std::abs(v1 - 900) <= 45 && std::abs(v2 - 900) <= 45, name + " rotation variance");
    const double lo = dtheta_lo[std::size_t(d)];
    c.expect(std::abs(mn - lo) <= 1 && std::abs(mx - 180) <= 1, name + " dtheta range");
    ranges += fmt("%s var %.0f/%.0f |dtheta| [%.1f, %.1f]; ", name.c_str(), v1, v2, mn, mx);
  }

  constexpr std::uint64_t kSamples = 10000;
  auto count_valid = [&](Control control) {
    std::array<CabcParams, 3> ps;
    for (std::size_t k = 0; k < 3; ++k) {
      ps[k].difficulty = Difficulty(k);
      ps[k].control = control;
      ps[k].seed = 77;
    }
    for (auto& p : ps) p.warp_gain = effective_warp_gain(p);
    const unsigned workers = worker_count();
    std::vector<std::future<std::uint64_t>> parts;
    for (unsigned w = 0; w < workers; ++w)
      parts.push_back(std::async(std::launch::async, [&, w] {
        std::uint64_t ok = 0;
        for (std::uint64_t i = w; i < kSamples; i += workers) {
          const auto s = generate_cabc_sample(ps[i % 3], i);
          bool valid = audit_cabc_sample(s, ps[i % 3]).empty();
          if (control == Control::luminance) {
            const int a = int(s.metadata.numbers.at("intensity1")), b = int(s.metadata.numbers.at("intensity2"));
            valid &= luminance_pair_valid(a, b);
            std::set<int> levels;
            for (std::size_t k = 0; k < 2; ++k)
              for (std::size_t px = 0; px < s.masks[k].pixels.size(); ++px)
                if (s.masks[k].pixels[px] && !s.masks[1 - k].pixels[px]) levels.insert(s.image.pixels[px]);
            for (int v : levels) valid &= v == 0 || v == 255 || v == a || v == b;
          } else {
            valid &= !any_overlap(s.masks[0], s.masks[1]) && masks_separated(s.masks[0], s.masks[1]);
          }
          ok += valid;
        }
        return ok;
      }));
    std::uint64_t ok = 0;
    for (auto& f : parts) ok += f.get();
    return ok;
  };
  const auto lum = count_valid(Control::luminance);
  const auto pos = count_valid(Control::positional);
  c.expect(lum == kSamples, "luminance control");
  c.expect(pos == kSamples, "positional control");
  const double elapsed = seconds_since(start);
  c.expect(elapsed <= 600, "runtime");
  c.note(ranges + fmt("luminance %llu/%llu, positional %llu/%llu, %.0f s (<= 600 s)", (unsigned long long)lum,
                      (unsigned long long)kSamples, (unsigned long long)pos, (unsigned long long)kSamples, elapsed));
  return c.outcome();
}

// ---------------------------------------------------------------------------
// 5. Determinism

std::map<std::string, std::string> archive_hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = sha256_file(e.path());
  return out;
}

Outcome determinism(const fs::path& work) {
  Checks c;
  std::size_t datasets = 0, identical = 0;
  auto compare = [&](const std::string& name, const std::function<void(const fs::path&, unsigned)>& gen) {
    const auto a = work / (name + "_a"), b = work / (name + "_b");
    fs::remove_all(a);
    fs::remove_all(b);
    gen(a, 1);
    gen(b, std::max(2u, worker_count()));
    ++datasets;
    const bool same = archive_hashes(a) == archive_hashes(b);
    identical += same;
    c.expect(same, name + " archive");
    fs::remove_all(a);
    fs::remove_all(b);
  };
  for (auto task : {Task::classification, Task::segmentation}) {
    const std::string tname = task == Task::classification ? "cls" : "seg";
    for (auto d : {Difficulty::easy, Difficulty::intermediate, Difficulty::hard}) {
      compare("cabc_" + difficulty_name(d) + "_" + tname, [&](const fs::path& dir, unsigned workers) {
        CabcParams p;
        p.difficulty = d;
        p.task = task;
        p.image_size = 64;
        p.count = 24;
        p.val_count = 8;
        p.seed = 5;
        p.workers = workers;
        generate_cabc_dataset(dir, p);
      });
    }
    for (std::size_t len : {6, 9, 14}) {
      compare("pathfinder_" + std::to_string(len) + "_" + tname, [&](const fs::path& dir, unsigned workers) {
        PathfinderParams p;
        p.path_length = len;
        p.task = task;
        p.image_size = 64;
        p.count = 24;
        p.val_count = 8;
        p.seed = 5;
        p.workers = workers;
        generate_pathfinder_dataset(dir, p);
      });
    }
  }
  for (auto control : {Control::luminance, Control::positional}) {
    compare("cabc_" + control_name(control), [&](const fs::path& dir, unsigned workers) {
      CabcParams p;
      p.control = control;
      p.image_size = 64;
      p.count = 24;
      p.val_count = 8;
      p.seed = 6;
      p.workers = workers;
      generate_cabc_dataset(dir, p);
    });
  }

  const auto train_split = pgroup::testing::toy_split(8, 48, 1);
  const auto val_split = pgroup::testing::toy_split(8, 16, 2);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 3;
  cfg.patience = 2;
  std::size_t cells = 0, same_curves = 0;
  for (auto v : {Variant::td_h, Variant::h, Variant::td, Variant::bu})
    for (std::uint64_t seed : {0, 3})
      for (double lr : {1e-3, 1e-2}) {
        auto run = [&] {
          Rng init(model_seed(seed));
          auto m = build_model<float>(pgroup::testing::tiny_architecture(v), init);
          return train(m, train_split, val_split, cfg, lr, seed).batch_losses;
        };
        const auto a = run(), b = run();
        ++cells;
        const bool same =
            a.size() == b.size() && !a.empty() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
        same_curves += same;
        c.expect(same, "loss curve " + variant_name(v) + " " + run_name(lr, seed));
      }
  c.note(fmt("%zu/%zu archives byte-identical (1 vs %u workers), %zu/%zu loss curves bit-identical", identical,
             datasets, std::max(2u, worker_count()), same_curves, cells));
  return c.outcome();
}

// ---------------------------------------------------------------------------
// 8b. Trace panels

Outcome trace_panels(const fs::path& work) {
  Checks c;
  const auto dir = work / "trace";
  fs::remove_all(dir);
  pgroup::testing::write_toy_dataset(dir / "data", 16, 8, 6, 3);
  auto arch = pgroup::testing::tiny_architecture(Variant::td_h, 16);
  arch.timesteps = 5;
  Rng init(11);
  auto model = build_model<float>(arch, init);
  save_checkpoint(dir / "model", model);

  std::ostringstream out, err;
  const int code = cli::run(std::vector<std::string>{"trace", "--checkpoint", (dir / "model").string(), "--data",
                                                     (dir / "data").string(), "--count", "6", "--out",
                                                     (dir / "panels").string()},
                            out, err);
  c.expect(code == 0, "trace exit code " + std::to_string(code) + " " + err.str());
  if (code != 0) return c.outcome();

  const auto index = nlohmann::json::parse(std::ifstream(dir / "panels" / "trace.json"));
  auto reloaded = load_checkpoint<float>(dir / "model");
  const auto split = load_split(dir / "data", "val");
  std::vector<std::size_t> idx(6);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  ForwardTrace<float> trace;
  predict(reloaded, batch_images<float>(split, idx), &trace);
  const std::size_t T = trace.h1.size();
  std::size_t images = 0, exact = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    ++images;
    bool ok = index.at(k).at("panels") == T - 1 && index.at(k).at("maps").size() == T - 1 &&
              fs::exists(dir / "panels" / index.at(k).at("png").get<std::string>());
    for (std::size_t t = 1; ok && t < T; ++t) {
      const auto saved = load_tensor<float>(dir / "panels" / index.at(k).at("maps")[t - 1].get<std::string>());
      const auto& a = trace.h1[t];
      const auto& b = trace.h1[t - 1];
      for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
          double na = 0, nb = 0;
          for (std::size_t ch = 0; ch < a.dim(1); ++ch) {
            na += double(a.at(k, ch, y, x)) * a.at(k, ch, y, x);
            nb += double(b.at(k, ch, y, x)) * b.at(k, ch, y, x);
          }
          ok &= saved[y * 16 + x] == float(float(std::sqrt(na)) - float(std::sqrt(nb)));
        }
    }
    exact += ok;
  }
  c.expect(exact == images, "panel values");
  c.note(fmt("T=%zu: %zu/%zu images have %zu panels equal to the recomputed state-norm differences", T, exact, images,
             T - 1));
  fs::remove_all(dir);
  return c.outcome();
}

// ---------------------------------------------------------------------------
// 9. Statistics oracle

Outcome statistics_oracle() {
  Checks c;
  double worst_gap = 0;
  for (std::uint64_t k = 0; k < 3; ++k) {
    Rng rng = make_rng(90, k);
    std::vector<double> p(400);
    for (auto& v : p) v = uniform(rng, 0.3, 1.0);
    const auto trials = simulate_raters(p, 20, k);
    CeilingOptions o;
    o.seed = k;
    const double ceiling = splithalf_ceiling(trials, o).ceiling;
    worst_gap = std::max(worst_gap, std::abs(ceiling - analytic_reliability(p, 20)));
  }
  c.expect(worst_gap <= 0.05, "ceiling vs analytic reliability");

  constexpr std::size_t kSims = 500, kImages = 100;
  std::size_t rejected = 0;
  for (std::size_t s = 0; s < kSims; ++s) {
    Rng rng = make_rng(91, s);
    std::vector<double> human(kImages), a(kImages), b(kImages);
    for (std::size_t i = 0; i < kImages; ++i) {
      human[i] = normal(rng, 0, 1);
      a[i] = human[i] + normal(rng, 0, 1);
      b[i] = human[i] + normal(rng, 0, 1);
    }
    rejected += bootstrap_compare(a, b, human, kMinBootstrapIterations, s).p < 0.05;
  }
  const double rate = double(rejected) / double(kSims);
  c.expect(rate >= 0.03 && rate <= 0.08, "null rejection rate");

  const bool sb = spearman_brown(0.5) == 2.0 / 3.0 && spearman_brown(1.0) == 1.0 && spearman_brown(0.0) == 0.0;
  c.expect(sb, "Spearman-Brown spot values");
  c.note(fmt("max |ceiling - analytic| %.3f (<= 0.05), null rejection %.3f in [0.03, 0.08] over %zu sims, SB(0.5) = "
             "%.17g",
             worst_gap, rate, kSims, spearman_brown(0.5)));
  return c.outcome();
}

// ---------------------------------------------------------------------------
// 6, 7, 8a. Training at desk scale

struct TrainingResults {
  std::optional<double> pf_h8, pf_h1, pf_bu, cabc_td, cabc_h, seg_td;
  std::string error;
};

TrainConfig mini_grid() {
  TrainConfig cfg;
  cfg.learning_rates = {1e-3, 1e-4, 1e-5, 1e-6};
  cfg.seeds = 3;
  cfg.workers = worker_count();
  cfg.save_checkpoints = false;
  return cfg;
}

double best_metric(const ArchitectureConfig& arch, const fs::path& data, const fs::path& out) {
  const auto train_split = load_split(data, "train");
  const auto val_split = load_split(data, "val");
  const auto r = sweep(arch, train_split, val_split, mini_grid(), out, &std::cerr);
  if (!r.any_ok()) throw std::runtime_error("every run failed in " + out.string());
  return r.runs[r.best].best_val_metric;
}

ArchitectureConfig lite_architecture(Variant v, std::size_t timesteps, Task task = Task::classification) {
  ArchitectureConfig a;
  a.variant = v;
  a.timesteps = timesteps;
  a.image_size = 64;
  a.task = task;
  return a;
}

TrainingResults run_training(const fs::path& work) {
  TrainingResults r;
  try {
    const auto pf = work / "pathfinder_lite";
    if (!fs::exists(pf / "DIGEST")) {
      PathfinderParams p;
      p.path_length = 9;
      p.image_size = 64;
      p.count = 5500;
      p.val_count = 500;
      p.seed = 61;
      p.workers = worker_count();
      generate_pathfinder_dataset(pf, p);
    }
    const auto cabc = work / "cabc_lite_hard";
    if (!fs::exists(cabc / "DIGEST")) {
      CabcParams p;
      p.difficulty = Difficulty::hard;
      p.image_size = 64;
      p.count = 5500;
      p.val_count = 500;
      p.seed = 62;
      p.workers = worker_count();
      generate_cabc_dataset(cabc, p);
    }
    const auto seg = work / "cabc_lite_seg";
    if (!fs::exists(seg / "DIGEST")) {
      CabcParams p;
      p.difficulty = Difficulty::hard;
      p.task = Task::segmentation;
      p.image_size = 64;
      p.count = 2200;
      p.val_count = 200;
      p.seed = 63;
      p.workers = worker_count();
      generate_cabc_dataset(seg, p);
    }
    r.pf_h8 = best_metric(lite_architecture(Variant::h, 8), pf, work / "runs" / "pf_h_t8");
    r.pf_bu = best_metric(lite_architecture(Variant::bu, 8), pf, work / "runs" / "pf_bu");
    r.pf_h1 = best_metric(lite_architecture(Variant::h, 1), pf, work / "runs" / "pf_h_t1");
    r.cabc_td = best_metric(lite_architecture(Variant::td, 8), cabc, work / "runs" / "cabc_td");
    r.cabc_h = best_metric(lite_architecture(Variant::h, 8), cabc, work / "runs" / "cabc_h");
    r.seg_td = best_metric(lite_architecture(Variant::td, 8, Task::segmentation), seg, work / "runs" / "seg_td");
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

Outcome straining_direction(const TrainingResults& r) {
  Checks c;
  if (!r.pf_h8 || !r.pf_bu || !r.cabc_td || !r.cabc_h) {
    c.expect(false, "training did not complete: " + r.error);
    return c.outcome();
  }
  c.expect(*r.pf_h8 >= 0.85, "Pathfinder H accuracy");
  c.expect(*r.pf_h8 - *r.pf_bu >= 0.10, "Pathfinder H - BU margin");
  c.expect(*r.cabc_td >= 0.80, "cABC TD accuracy");
  c.expect(*r.cabc_td - *r.cabc_h >= 0.05, "cABC TD - H margin");
  c.note(fmt("Pathfinder H %.3f (>= 0.85) BU %.3f (margin >= 0.10); cABC TD %.3f (>= 0.80) H %.3f (margin >= 0.05)",
             *r.pf_h8, *r.pf_bu, *r.cabc_td, *r.cabc_h));
  return c.outcome();
}

Outcome recurrence_benefit(const TrainingResults& r) {
  Checks c;
  if (!r.pf_h8 || !r.pf_h1) {
    c.expect(false, "training did not complete: " + r.error);
    return c.outcome();
  }
  c.expect(*r.pf_h8 - *r.pf_h1 >= 0.05, "T=8 - T=1 margin");
  c.note(fmt("Pathfinder H T=8 %.3f, T=1 %.3f (margin >= 0.05)", *r.pf_h8, *r.pf_h1));
  return c.outcome();
}

Outcome segmentation_f1(const TrainingResults& r) {
  Checks c;
  if (!r.seg_td) {
    c.expect(false, "training did not complete: " + r.error);
    return c.outcome();
  }
  c.expect(*r.seg_td > 0.6, "pixel f1");
  c.note(fmt("TD segmentation pixel f1 %.3f (> 0.6)", *r.seg_td));
  return c.outcome();
}

struct Criterion {
  std::string id;
  std::string title;
  bool training;
  std::function<Outcome()> run;
};

const char* status_name(Status s) {
  switch (s) {
    case Status::pass: return "PASS";
    case Status::fail: return "FAIL";
    case Status::skipped: return "SKIPPED";
  }
  return "?";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  fs::path workdir = fs::temp_directory_path() / "pgroup_acceptance";
  bool training_only = false, all = false;
  std::vector<std::string> only;
  app.add_option("--workdir", workdir, "Scratch directory");
  auto* t = app.add_flag("--training-only", training_only, "Run only the criteria that train networks");
  app.add_flag("--all", all, "Run every criterion, including training")->excludes(t);
  app.add_option("--only", only, "Criterion ids to run (e.g. 1 4 8b)");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);
  set_gemm_threads(1);

  std::optional<TrainingResults> training;
  auto trained = [&]() -> const TrainingResults& {
    if (!training) training = run_training(workdir / "training");
    return *training;
  };

  const std::vector<Criterion> criteria{
      {"1", "gradient fidelity", false, gradient_fidelity},
      {"2", "fGRU invariants", false, fgru_invariants},
      {"3", "lesion correctness", false, lesions},
      {"4", "generator statistics", false, generator_statistics},
      {"5", "determinism", false, [&] { return determinism(workdir); }},
      {"6", "toy straining direction", true, [&] { return straining_direction(trained()); }},
      {"7", "recurrence benefit", true, [&] { return recurrence_benefit(trained()); }},
      {"8a", "segmentation f1", true, [&] { return segmentation_f1(trained()); }},
      {"8b", "trace panels", false, [&] { return trace_panels(workdir); }},
      {"9", "statistics oracle", false, statistics_oracle},
  };

  int failures = 0;
  for (const auto& cr : criteria) {
    Outcome o;
    const bool selected = only.empty() || std::find(only.begin(), only.end(), cr.id) != only.end();
    if (!selected) {
      o = {Status::skipped, "not selected"};
    } else if (!all && cr.training != training_only) {
      o = {Status::skipped, cr.training ? "trains networks for hours; run with --training-only or --all"
                                        : "not part of --training-only"};
    } else {
      const auto start = Clock::now();
      try {
        o = cr.run();
      } catch (const std::exception& e) {
        o = {Status::fail, std::string("exception: ") + e.what()};
      }
      o.detail += fmt(" [%.1f s]", seconds_since(start));
    }
    failures += o.status == Status::fail;
    std::cout << status_name(o.status) << " " << cr.id << " " << cr.title << ": " << o.detail << std::endl;
  }
  return failures ? 1 : 0;
}
