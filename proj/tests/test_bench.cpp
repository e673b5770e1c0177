#include "kvedit/bench.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace kvedit;

TEST(BenchScaling, ProducesOneRowPerSizeWithSaneNumbers) {
  ScalingConfig cfg;
  cfg.sizes = {100, 400};
  cfg.d1 = 16;
  cfg.d2 = 8;
  cfg.queries = 20;
  const auto rows = bench_scaling(cfg);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& row : rows) {
    EXPECT_EQ(row.formula_scalars, formula_scalars(16, 8, row.m));
    EXPECT_GT(row.bytes, 0u);
    EXPECT_LE(row.query_p50_ms, row.query_p99_ms);
    EXPECT_LE(static_cast<double>(row.bytes), 2.0 * row.formula_scalars * sizeof(double));
  }
  const std::string csv = scaling_csv(rows);
  std::istringstream in(csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("m,build_seconds,query_p50_ms", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(BenchScaling, RejectsUnsortedSizes) {
  ScalingConfig cfg;
  cfg.sizes = {400, 100};
  EXPECT_THROW(bench_scaling(cfg), std::invalid_argument);
}
