#include "kvedit/kvdb.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace kvedit;

namespace {

DenseMatrix gaussian(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  DenseMatrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

void BM_Query(benchmark::State& state) {
  const auto m = static_cast<Index>(state.range(0));
  std::mt19937_64 rng(1);
  const NeuralKVDatabase db = NeuralKVDatabase::build(gaussian(128, m, rng), gaussian(64, m, rng));
  const DenseMatrix probes = gaussian(128, 64, rng);
  Index i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(db.query(probes.col(i++ % probes.cols())));
  }
  state.SetComplexityN(state.range(0));
  state.counters["bytes"] = static_cast<double>(db.memory_bytes());
}
BENCHMARK(BM_Query)->RangeMultiplier(4)->Range(1 << 10, 1 << 16)->Complexity(benchmark::oN);

void BM_Build(benchmark::State& state) {
  const auto m = static_cast<Index>(state.range(0));
  std::mt19937_64 rng(2);
  const DenseMatrix keys = gaussian(128, m, rng);
  const DenseMatrix residuals = gaussian(64, m, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(NeuralKVDatabase::build(keys, residuals));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Build)->RangeMultiplier(4)->Range(1 << 10, 1 << 16)->Complexity(benchmark::oN);

void BM_Insert(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const DenseMatrix keys = gaussian(128, 1024, rng);
  const DenseMatrix residuals = gaussian(64, 1024, rng);
  for (auto _ : state) {
    NeuralKVDatabase db(128, 64);
    for (Index j = 0; j < keys.cols(); ++j) db.insert(keys.col(j), residuals.col(j));
    benchmark::DoNotOptimize(db.size());
  }
}
BENCHMARK(BM_Insert);

}  // namespace

BENCHMARK_MAIN();
