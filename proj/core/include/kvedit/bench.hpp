#pragma once

// Build time, query latency and memory of NeuralKVDatabase as m grows.

#include "kvedit/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace kvedit {

struct ScalingConfig {
  std::vector<std::size_t> sizes;  ///< ascending
  Index d1 = 128;
  Index d2 = 64;
  std::size_t queries = 200;
  int repetitions = 1;
  std::uint64_t seed = 0;
};

struct ScalingRow {
  std::size_t m = 0;
  double build_seconds = 0.0;
  double query_p50_ms = 0.0;
  double query_p99_ms = 0.0;
  std::size_t bytes = 0;
  /// (d1 + d2) · m
  double formula_scalars = 0.0;
};

double formula_scalars(Index d1, Index d2, std::size_t m);

/// Random Gaussian keys and residuals; half the queries are perturbed copies
/// of stored keys and half are fresh random vectors. Build time is the best of
/// `repetitions`, latencies pool all repetitions.
std::vector<ScalingRow> bench_scaling(const ScalingConfig& cfg);

std::string scaling_csv(const std::vector<ScalingRow>& rows);

}  // namespace kvedit
