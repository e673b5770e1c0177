#include "kvedit/solvers.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace kvedit;

namespace {

EditProblem problem(Index d1, Index m, Index n) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  auto fill = [&](Index r, Index c) {
    DenseMatrix x(r, c);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    return x;
  };
  EditProblem p;
  p.w = fill(d1 / 2, d1);
  p.k1 = fill(d1, m);
  p.vhat1 = fill(d1 / 2, m);
  p.k0 = fill(d1, n);
  return p;
}

void BM_Memit(benchmark::State& state) {
  const EditProblem p = problem(state.range(0), 50, 2 * state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(memit_delta(p));
}
BENCHMARK(BM_Memit)->Arg(64)->Arg(128)->Arg(256);

void BM_AlphaEdit(benchmark::State& state) {
  const EditProblem p = problem(state.range(0), 50, state.range(0) / 2);
  for (auto _ : state) benchmark::DoNotOptimize(alphaedit_delta(p));
}
BENCHMARK(BM_AlphaEdit)->Arg(64)->Arg(128)->Arg(256);

void BM_Projector(benchmark::State& state) {
  const EditProblem p = problem(state.range(0), 1, 4 * state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(null_space_projector(p.k0));
}
BENCHMARK(BM_Projector)->Arg(64)->Arg(128)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
