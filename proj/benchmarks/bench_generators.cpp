#include <benchmark/benchmark.h>

#include "pgroup/cabc.hpp"
#include "pgroup/pathfinder.hpp"

using namespace pgroup;

namespace {

void BM_CabcSample(benchmark::State& state) {
  CabcParams p;
  p.difficulty = Difficulty(state.range(0));
  p.image_size = std::size_t(state.range(1));
  p.warp_gain = effective_warp_gain(p);
  std::uint64_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_cabc_sample(p, i++));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_CabcSample)->Args({0, 128})->Args({2, 128})->Args({2, 64})->Unit(benchmark::kMillisecond);

void BM_PathfinderSample(benchmark::State& state) {
  PathfinderParams p;
  p.path_length = std::size_t(state.range(0));
  p.image_size = std::size_t(state.range(1));
  std::uint64_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_pathfinder_sample(p, i++));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_PathfinderSample)->Args({6, 128})->Args({14, 128})->Args({9, 64})->Unit(benchmark::kMillisecond);

}  // namespace
