#include "kvedit/dataset.hpp"
#include "kvedit/editing.hpp"

#include <benchmark/benchmark.h>

using namespace kvedit;

namespace {

const ToyModel& model() {
  static const ToyModel m = ToyModel::random(ToyModelConfig{});
  return m;
}

void BM_Forward(benchmark::State& state) {
  const Tokens tokens(static_cast<std::size_t>(state.range(0)), 77);
  for (auto _ : state) benchmark::DoNotOptimize(forward(model(), tokens));
}
BENCHMARK(BM_Forward)->Arg(4)->Arg(16)->Arg(32);

void BM_ResidualFit(benchmark::State& state) {
  const std::vector<Fact> facts = synth_facts(8, model(), 1);
  ResidualFitConfig cfg;
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(optimize_residual(model(), facts[i++ % facts.size()], 2, cfg));
  }
}
BENCHMARK(BM_ResidualFit)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
