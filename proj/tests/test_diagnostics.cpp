#include "support.hpp"

#include "kvedit/diagnostics.hpp"

#include <gtest/gtest.h>

using namespace kvedit;
using namespace kvedit::testing;

TEST(Diagnostics, AlphaEditPoolsSeparateEditedFromPreserved) {
  std::mt19937_64 rng(1);
  EditProblem p = random_problem(48, 12, 20, 0, 1.0, rng);
  p.k0 = gaussian(48, 8, rng) * gaussian(8, 30, rng);
  const EditSolution sol = alphaedit_delta(p);
  DenseMatrix probes(48, 50);
  probes << p.k1, p.k0;
  std::vector<std::optional<std::size_t>> labels(50);
  for (std::size_t i = 0; i < 20; ++i) labels[i] = i;
  const ScoreDiagnostics d = diagnose_scores(sol, probes, labels);
  EXPECT_EQ(d.positive.size(), 20u);
  EXPECT_EQ(d.negative.size(), 20u * 19u + 30u * 20u);
  EXPECT_GT(d.positive_mean - d.negative_mean, 0.5);
  ASSERT_TRUE(d.reconstruction_error.has_value());
  EXPECT_LT(*d.reconstruction_error, 1e-10);
  EXPECT_NE(d.summary_csv().find("positive,20,"), std::string::npos);
}

TEST(Diagnostics, DatabaseScoresAreCosines) {
  std::mt19937_64 rng(2);
  const DenseMatrix keys = gaussian(16, 5, rng);
  const NeuralKVDatabase db = NeuralKVDatabase::build(keys, gaussian(4, 5, rng));
  std::vector<std::optional<std::size_t>> labels = {0, 1, 2, 3, 4};
  const ScoreDiagnostics d = diagnose_scores(db, keys, labels);
  for (double s : d.positive) EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_FALSE(d.reconstruction_error.has_value());
  EXPECT_LE(d.max_abs, 1.0 + 1e-12);
}

TEST(Diagnostics, RejectsBadLabels) {
  std::mt19937_64 rng(3);
  const NeuralKVDatabase db = NeuralKVDatabase::build(gaussian(8, 3, rng), gaussian(2, 3, rng));
  std::vector<std::optional<std::size_t>> labels = {7};
  EXPECT_THROW(diagnose_scores(db, gaussian(8, 1, rng), labels), std::out_of_range);
  std::vector<std::optional<std::size_t>> two = {0, 1};
  EXPECT_THROW(diagnose_scores(db, gaussian(8, 1, rng), two), std::invalid_argument);
}
