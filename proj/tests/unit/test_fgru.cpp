#include <cmath>

#include "doctest.h"
#include "pgroup/fgru.hpp"
#include "pgroup/gradcheck.hpp"
#include "support/random.hpp"

using namespace pgroup;
using pgroup::testing::random_tensor;

namespace {

std::vector<Tensor<double>*> parameter_list(FGruParams<double>& p) {
  std::vector<Tensor<double>*> out;
  p.visit_parameters([&](const std::string&, Tensor<double>& t) { out.push_back(&t); });
  return out;
}

/// Every learnable randomised so no term is trivially zero.
FGruParams<double> random_params(const FGruConfig& cfg, std::mt19937_64& rng) {
  Rng init_rng(rng());
  FGruParams<double> p = init_fgru<double>(cfg, init_rng);
  for (Tensor<double>* t : parameter_list(p)) *t = random_tensor(t->shape(), rng, -0.8, 0.8);
  for (auto& sites : p.bn)
    for (auto& s : sites) s.scale = random_tensor(s.scale.shape(), rng, 0.5, 1.5);
  return p;
}

void set_identity_bn(BatchNormParams<double>& bn, double bias = 0.0) {
  for (auto& v : bn.scale.values()) v = 1.0;
  for (auto& v : bn.bias.values()) v = bias;
}

struct StepResult {
  Tensor<double> h;
  FGruStepTrace<double> trace;
};

StepResult run_step(const Tensor<double>& x, const Tensor<double>& h_prev, FGruParams<double>& p, std::size_t t,
                    Mode mode = Mode::train) {
  Tape<double> tape;
  ParamBinder<double> bind(tape, false);
  StepResult r;
  r.h = fgru_step(tape.constant(x), tape.constant(h_prev), p, t, mode, bind, &r.trace).value();
  return r;
}

const FGruConfig kSmall{4, 3, 1, 2, false};

}  // namespace

TEST_CASE("mix gate closed keeps the previous state") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = random_params(kSmall, rng);
    const std::size_t t = trial % 2;
    for (auto& v : p.U_E.values()) v = 0.0;
    set_identity_bn(p.site(t, BnSite::mix_gate), -20.0);
    auto x = random_tensor({2, 4, 8, 8}, rng);
    auto h_prev = random_tensor({2, 4, 8, 8}, rng, 0.0, 1.0);
    auto r = run_step(x, h_prev, p, t);
    // The residual leak is sigmoid(-20) * (candidate - h_prev), so the bound scales with that gap.
    double worst = 0;
    for (std::size_t i = 0; i < r.h.size(); ++i) {
      REQUIRE(r.trace.mix_gate[i] < 1e-8);
      const double gap = std::max(1.0, std::abs(r.trace.candidate[i] - h_prev[i]));
      worst = std::max(worst, std::abs(r.h[i] - h_prev[i]) / gap);
    }
    CHECK(worst < 1e-8);
  }
}

TEST_CASE("zero suppression kernel leaves Z = relu(X)") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = random_params(kSmall, rng);
    const std::size_t t = trial % 2;
    for (auto& v : p.W_I.values()) v = 0.0;
    set_identity_bn(p.site(t, BnSite::suppression));
    auto x = random_tensor({2, 4, 8, 8}, rng);
    auto h_prev = random_tensor({2, 4, 8, 8}, rng);
    auto r = run_step(x, h_prev, p, t);
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(r.trace.z[i] == std::max(x[i], 0.0));
  }
}

TEST_CASE("new state lies between the previous state and the candidate") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = random_params(kSmall, rng);
    auto x = random_tensor({2, 4, 8, 8}, rng, -1.0, 2.0);
    auto h_prev = random_tensor({2, 4, 8, 8}, rng, 0.0, 2.0);
    auto r = run_step(x, h_prev, p, trial % 2);
    for (std::size_t i = 0; i < r.h.size(); ++i) {
      const double lo = std::min(h_prev[i], r.trace.candidate[i]);
      const double hi = std::max(h_prev[i], r.trace.candidate[i]);
      const double slack = 1e-12 * std::max(1.0, hi);
      REQUIRE(r.h[i] >= lo - slack);
      REQUIRE(r.h[i] <= hi + slack);
      REQUIRE(r.trace.z[i] >= 0.0);
      REQUIRE(r.trace.candidate[i] >= 0.0);
    }
  }
}

TEST_CASE("full step gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(1000 + seed);
    const FGruConfig cfg{4, 3, 1, 1, false};
    const FGruParams<double> base = random_params(cfg, rng);
    const auto weights = random_tensor({2, 4, 8, 8}, rng);

    std::vector<Tensor<double>> inputs{random_tensor({2, 4, 8, 8}, rng), random_tensor({2, 4, 8, 8}, rng, 0.0, 1.0)};
    FGruParams<double> scratch = base;
    for (Tensor<double>* t : parameter_list(scratch)) inputs.push_back(*t);

    auto fn = [&](Tape<double>& tape, const std::vector<Var<double>>& in) {
      FGruParams<double> p = base;
      ParamBinder<double> bind(tape, false);
      auto params = parameter_list(p);
      for (std::size_t k = 0; k < params.size(); ++k) bind.set(*params[k], in[k + 2]);
      return weighted_sum(fgru_step(in[0], in[1], p, 0, Mode::train, bind), weights);
    };
    auto result = check_gradients(fn, inputs, GradCheckOptions{1e-3, 1e-5, true});
    CHECK(result.passed);
    CHECK(result.max_relative_error <= 1e-5);
  }
}

TEST_CASE("init_fgru follows the initialization rules") {
  Rng rng(7);
  const FGruConfig cfg{20, 15, 1, 8, true};
  auto p = init_fgru<double>(cfg, rng);
  CHECK(p.bn.size() == 8);
  std::size_t sites = 0;
  for (auto& s : p.bn) sites += s.size();
  CHECK(sites == 4 * 8);
  const double hi = std::log(7.0);
  for (std::size_t t = 0; t < 8; ++t) {
    for (std::size_t c = 0; c < 20; ++c) {
      const double mix = p.site(t, BnSite::mix_gate).bias[c];
      const double gain = p.site(t, BnSite::gain_gate).bias[c];
      CHECK(mix >= 0.0);
      CHECK(mix <= hi);
      CHECK(gain == -mix);
      CHECK(p.site(t, BnSite::suppression).bias[c] == 0.0);
      CHECK(p.site(t, BnSite::facilitation).bias[c] == 0.0);
    }
    for (auto& s : p.bn[t]) {
      for (double v : s.scale.values()) CHECK(v == doctest::Approx(0.1));
    }
  }
  for (double v : p.mu.values()) CHECK(v == 0.0);
  for (double v : p.kappa.values()) CHECK(v == 0.0);
  for (double v : p.alpha.values()) CHECK(v == doctest::Approx(0.1));
  for (double v : p.omega.values()) CHECK(v == doctest::Approx(0.1));
  REQUIRE(p.beta.has_value());
  Tape<double> tape;
  for (double v : sigmoid(tape.constant(*p.beta)).value().values()) CHECK(v == 0.5);
  CHECK(p.W_I.shape() == Shape{20, 20, 15, 15});
  CHECK(p.U_I.shape() == Shape{20, 20, 1, 1});
  const double bound = std::sqrt(6.0 / (20 * 15 * 15));
  CHECK(max_abs(p.W_E) <= bound);

  Rng a(99), b(99);
  auto pa = init_fgru<float>(cfg, a);
  auto pb = init_fgru<float>(cfg, b);
  std::vector<Tensor<float>> ta, tb;
  pa.visit_parameters([&](const std::string&, Tensor<float>& t) { ta.push_back(t); });
  pb.visit_parameters([&](const std::string&, Tensor<float>& t) { tb.push_back(t); });
  CHECK(ta == tb);
}

TEST_CASE("chronos biases span the unroll horizon") {
  Rng rng(3);
  auto b = chronos_bias(10000, 8, rng);
  double lo = 1e9, hi = -1e9;
  for (double v : b) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= 0.0);
  CHECK(hi <= std::log(7.0));
  CHECK(hi > std::log(6.9));
  CHECK(lo < 0.01);
  for (double v : chronos_bias(5, 1, rng)) CHECK(v == 0.0);
}

TEST_CASE("topdown blend limits and gradients") {
  std::mt19937_64 rng(4);
  auto low = random_tensor({2, 3, 4, 4}, rng);
  auto out = random_tensor({2, 3, 4, 4}, rng);
  Tape<double> tape;
  auto closed = topdown_blend(tape.constant(low), tape.constant(out), tape.constant(Tensor<double>({3}, 20.0)));
  for (std::size_t i = 0; i < low.size(); ++i) CHECK(std::abs(closed.value()[i] - low[i]) < 1e-8);
  auto half = topdown_blend(tape.constant(low), tape.constant(out), tape.constant(Tensor<double>({3})));
  for (std::size_t i = 0; i < low.size(); ++i) CHECK(half.value()[i] == doctest::Approx(0.5 * (low[i] + out[i])));

  auto weights = random_tensor({2, 3, 4, 4}, rng);
  auto result = check_gradients(
      [&](Tape<double>&, const std::vector<Var<double>>& in) {
        return weighted_sum(topdown_blend(in[0], in[1], in[2]), weights);
      },
      {low, out, random_tensor({3}, rng, -2, 2)});
  CHECK(result.passed);

  CHECK_THROWS_AS(topdown_blend(tape.constant(low), tape.constant(Tensor<double>({2, 3, 4, 5})),
                                tape.constant(Tensor<double>({3}))),
                  ContractError);
}

TEST_CASE("1x1 fgru keeps every pixel independent in eval mode") {
  std::mt19937_64 rng(5);
  const FGruConfig cfg{4, 1, 1, 3, false};
  auto p = random_params(cfg, rng);
  auto x = random_tensor({1, 4, 9, 9}, rng);
  auto h_prev = random_tensor({1, 4, 9, 9}, rng, 0.0, 1.0);
  const auto base = run_step(x, h_prev, p, 1, Mode::eval).h;
  for (int probe = 0; probe < 10; ++probe) {
    const std::size_t py = rng() % 9, px = rng() % 9;
    auto bumped = x;
    for (std::size_t c = 0; c < 4; ++c) bumped.at(0, c, py, px) += 0.5;
    const auto h = run_step(bumped, h_prev, p, 1, Mode::eval).h;
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t y = 0; y < 9; ++y)
        for (std::size_t xx = 0; xx < 9; ++xx)
          if (y != py || xx != px) REQUIRE(h.at(0, c, y, xx) == base.at(0, c, y, xx));
  }
}

TEST_CASE("fgru_step contract errors") {
  std::mt19937_64 rng(6);
  auto p = random_params(kSmall, rng);
  Tape<double> tape;
  ParamBinder<double> bind(tape, false);
  auto x = tape.constant(Tensor<double>({1, 4, 5, 5}));
  CHECK_THROWS_AS(fgru_step(x, tape.constant(Tensor<double>({1, 4, 5, 6})), p, 0, Mode::train, bind), ContractError);
  CHECK_THROWS_AS(fgru_step(x, x, p, 2, Mode::train, bind), ContractError);
  auto wrong = tape.constant(Tensor<double>({1, 3, 5, 5}));
  CHECK_THROWS_AS(fgru_step(wrong, wrong, p, 0, Mode::train, bind), ContractError);
  Rng init_rng(1);
  CHECK_THROWS_AS(init_fgru<double>(FGruConfig{4, 2, 1, 2, false}, init_rng), ContractError);
}
