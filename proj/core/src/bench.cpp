#include "kvedit/bench.hpp"

#include "kvedit/kvdb.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>

namespace kvedit {

double formula_scalars(Index d1, Index d2, std::size_t m) {
  return static_cast<double>(d1 + d2) * static_cast<double>(m);
}

namespace {

using Clock = std::chrono::steady_clock;

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1) + 0.5);
  return v[std::min(idx, v.size() - 1)];
}

DenseMatrix gaussian(std::mt19937_64& rng, Index rows, Index cols) {
  std::normal_distribution<double> dist;
  DenseMatrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

std::vector<ScalingRow> bench_scaling(const ScalingConfig& cfg) {
  if (!std::is_sorted(cfg.sizes.begin(), cfg.sizes.end())) {
    throw std::invalid_argument("bench_scaling: sizes must be ascending");
  }
  if (cfg.repetitions < 1) throw std::invalid_argument("bench_scaling: repetitions < 1");
  std::mt19937_64 rng(cfg.seed);
  std::vector<ScalingRow> rows;
  for (const std::size_t m : cfg.sizes) {
    const auto cols = static_cast<Index>(m);
    const DenseMatrix keys = gaussian(rng, cfg.d1, cols);
    const DenseMatrix residuals = gaussian(rng, cfg.d2, cols);
    const DenseMatrix noise = gaussian(rng, cfg.d1, static_cast<Index>(cfg.queries));
    std::uniform_int_distribution<Index> pick(0, std::max<Index>(cols - 1, 0));

    ScalingRow row;
    row.m = m;
    row.formula_scalars = formula_scalars(cfg.d1, cfg.d2, m);
    row.build_seconds = 1e300;
    std::vector<double> latencies;
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
      const auto t0 = Clock::now();
      const NeuralKVDatabase db = NeuralKVDatabase::build(keys, residuals);
      row.build_seconds =
          std::min(row.build_seconds, std::chrono::duration<double>(Clock::now() - t0).count());
      row.bytes = db.memory_bytes();
      for (std::size_t q = 0; q < cfg.queries; ++q) {
        DenseVector k = noise.col(static_cast<Index>(q));
        if (q % 2 == 0 && m > 0) k = keys.col(pick(rng)) + 0.3 * k;
        const auto s = Clock::now();
        const RetrievalResult r = db.query(k);
        latencies.push_back(std::chrono::duration<double, std::milli>(Clock::now() - s).count());
        if (r.similarity > 2.0) throw std::logic_error("bench_scaling: impossible similarity");
      }
    }
    row.query_p50_ms = percentile(latencies, 0.50);
    row.query_p99_ms = percentile(latencies, 0.99);
    rows.push_back(row);
  }
  return rows;
}

std::string scaling_csv(const std::vector<ScalingRow>& rows) {
  std::ostringstream os;
  os << "m,build_seconds,query_p50_ms,query_p99_ms,bytes,formula_scalars,bytes_per_formula_scalar\n";
  char buf[256];
  for (const auto& r : rows) {
    const double ratio = r.formula_scalars > 0 ? static_cast<double>(r.bytes) / r.formula_scalars : 0.0;
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%zu,%.0f,%.4f\n", r.m, r.build_seconds,
                  r.query_p50_ms, r.query_p99_ms, r.bytes, r.formula_scalars, ratio);
    os << buf;
  }
  return os.str();
}

}  // namespace kvedit
