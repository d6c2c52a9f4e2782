#include <benchmark/benchmark.h>

#include "pgroup/architecture.hpp"
#include "pgroup/ops.hpp"

using namespace pgroup;

namespace {

// One forward and backward pass of an 8-image batch at 32x32.
void BM_TrainStep(benchmark::State& state) {
  ArchitectureConfig a;
  a.variant = Variant(state.range(0));
  a.timesteps = std::size_t(state.range(1));
  a.image_size = 32;
  Rng rng(3);
  auto m = build_model<float>(a, rng);
  Tensor<float> images({8, 1, 32, 32});
  for (auto& v : images.values()) v = float(uniform(rng, 0, 1));
  Tensor<float> labels({8, 1, 1, 1});
  for (std::size_t i = 0; i < 8; ++i) labels[i] = float(i % 2);
  set_gemm_threads(1);
  for (auto _ : state) {
    Tape<float> tape;
    ParamBinder<float> bind(tape, true);
    auto g = tape.backward(loss(forward(m, bind, images, Mode::train), labels));
    benchmark::DoNotOptimize(g);
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_TrainStep)
    ->ArgNames({"variant", "T"})
    ->Args({int(Variant::h), 8})
    ->Args({int(Variant::td), 8})
    ->Args({int(Variant::bu), 1})
    ->Unit(benchmark::kMillisecond);

}  // namespace
