#include <benchmark/benchmark.h>

#include "pgroup/fgru.hpp"
#include "pgroup/ops.hpp"
#include "pgroup/rng.hpp"

using namespace pgroup;

namespace {

Tensor<float> filled(Shape s, Rng& rng) {
  Tensor<float> t(std::move(s));
  for (auto& v : t.values()) v = float(uniform(rng, -1, 1));
  return t;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto size = std::size_t(state.range(0));
  const auto kernel = std::size_t(state.range(1));
  Rng rng(1);
  const auto x = filled({8, 20, size, size}, rng);
  const auto w = filled({20, 20, kernel, kernel}, rng);
  for (auto _ : state) {
    Tape<float> tape;
    auto wv = tape.leaf(w);
    auto y = conv2d(tape.constant(x), wv);
    auto g = tape.backward(sum(y));
    benchmark::DoNotOptimize(g);
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({32, 3})->Args({32, 15})->Args({64, 7})->Unit(benchmark::kMillisecond);

void BM_FGruStep(benchmark::State& state) {
  const auto size = std::size_t(state.range(0));
  const auto kernel = std::size_t(state.range(1));
  Rng rng(2);
  auto p = init_fgru<float>(FGruConfig{20, kernel, 1, 8, false}, rng);
  const auto x = filled({8, 20, size, size}, rng);
  const auto h = filled({8, 20, size, size}, rng);
  for (auto _ : state) {
    Tape<float> tape;
    ParamBinder<float> bind(tape, true);
    auto out = fgru_step(tape.constant(x), tape.constant(h), p, 0, Mode::train, bind);
    auto g = tape.backward(sum(out));
    benchmark::DoNotOptimize(g);
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_FGruStep)->Args({32, 15})->Args({64, 15})->Args({64, 1})->Unit(benchmark::kMillisecond);

}  // namespace
