#include "support.hpp"

#include "kvedit/solvers.hpp"

#include <gtest/gtest.h>

using namespace kvedit;
using namespace kvedit::testing;

namespace {

struct Case {
  Index n;
  double beta;
};

class SolverOracle : public ::testing::TestWithParam<Case> {};

}  // namespace

TEST_P(SolverOracle, MemitMatchesConjugateGradientMinimizer) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam().n * 100 + GetParam().beta * 10));
  for (int trial = 0; trial < 5; ++trial) {
    const EditProblem p = random_problem(24, 10, 6, GetParam().n, GetParam().beta, rng);
    const EditSolution sol = memit_delta(p);
    EXPECT_LT(relative_error(sol.delta, memit_oracle(p)), 1e-4);
    // The closed form is a stationary point: no direction lowers the objective.
    const double f = memit_objective(p, sol.delta);
    const DenseMatrix nudge = gaussian(10, 24, rng, 1e-3);
    EXPECT_LE(f, memit_objective(p, sol.delta + nudge) + 1e-9);
  }
}

TEST_P(SolverOracle, AlphaEditMatchesConjugateGradientMinimizer) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam().n * 31 + GetParam().beta * 7));
  for (int trial = 0; trial < 5; ++trial) {
    const EditProblem p = random_problem(24, 10, 6, GetParam().n, GetParam().beta, rng);
    const NullSpaceProjector proj = null_space_projector(p.k0);
    const EditSolution sol = alphaedit_delta(p, proj.p);
    EXPECT_LT(relative_error(sol.delta, alphaedit_oracle(p, proj.p)), 1e-8);
    if (p.k0.cols() > 0) EXPECT_LT((sol.delta * p.k0).norm() / p.k0.norm(), 1e-10);
    // Δ lives in the row space of P.
    EXPECT_LT((sol.delta - sol.delta * proj.p).norm(), 1e-10 * std::max(1.0, sol.delta.norm()));
  }
}

TEST_P(SolverOracle, DeltaIsResidualsTimesScores) {
  std::mt19937_64 rng(9);
  const EditProblem p = random_problem(24, 10, 6, GetParam().n, GetParam().beta, rng);
  for (const EditSolution& sol : {memit_delta(p), alphaedit_delta(p)}) {
    EXPECT_LT(relative_error(sol.residuals, residual_matrix(p.w, p.k1, p.vhat1)), 1e-15);
    EXPECT_LT((sol.kernel - sol.kernel.transpose()).norm(), 1e-9 * sol.kernel.norm() + 1e-300);
    const DenseVector k = gaussian(24, 1, rng);
    const DenseVector lhs = sol.delta * k;
    EXPECT_LT((lhs - sol.residuals * weighted_scores(sol, k)).norm(), 1e-10 * std::max(1.0, lhs.norm()));
  }
}

INSTANTIATE_TEST_SUITE_P(Grid, SolverOracle,
                         ::testing::Values(Case{0, 0.1}, Case{0, 1.0}, Case{10, 0.1}, Case{10, 1.0},
                                           Case{10, 10.0}, Case{40, 1.0}, Case{40, 10.0}));

TEST(Memit, RidgeIsReportedWhenKeysUnderdetermineTheSystem) {
  std::mt19937_64 rng(11);
  const EditProblem p = random_problem(16, 4, 3, 0, 1.0, rng);
  EXPECT_TRUE(memit_delta(p).provenance.solve.ridge_applied);
  const EditProblem q = random_problem(16, 4, 3, 40, 1.0, rng);
  EXPECT_FALSE(memit_delta(q).provenance.solve.ridge_applied);
}

TEST(Memit, PreservationImprovesWithBeta) {
  std::mt19937_64 rng(12);
  EditProblem p = random_problem(20, 8, 5, 12, 0.1, rng);
  double prev = std::numeric_limits<double>::infinity();
  for (double beta : {0.1, 1.0, 10.0, 100.0}) {
    p.beta = beta;
    const double leak = (memit_delta(p).delta * p.k0).norm();
    EXPECT_LT(leak, prev);
    prev = leak;
  }
}

TEST(AlphaEdit, ProvenanceRecordsProjector) {
  std::mt19937_64 rng(13);
  const EditProblem p = random_problem(20, 8, 5, 7, 1.0, rng);
  const EditSolution sol = alphaedit_delta(p);
  EXPECT_EQ(sol.provenance.projector_rank, 13);
  EXPECT_EQ(sol.provenance.projector_spectrum.size(), 20);
  EXPECT_EQ(sol.method, EditMethod::kAlphaEdit);
}

TEST(AlphaEdit, EditedKeysScoreThemselves) {
  std::mt19937_64 rng(14);
  EditProblem p = random_problem(64, 16, 10, 0, 1e-3, rng);
  const EditSolution sol = alphaedit_delta(p);
  for (Index i = 0; i < 10; ++i) {
    const DenseVector w = weighted_scores(sol, p.k1.col(i));
    EXPECT_NEAR(w(i), 1.0, 1e-3);
    for (Index j = 0; j < 10; ++j) {
      if (j != i) EXPECT_NEAR(w(j), 0.0, 1e-3);
    }
  }
}

TEST(EditProblem, ValidationNamesTheProblem) {
  std::mt19937_64 rng(15);
  EditProblem p = random_problem(8, 4, 3, 2, 1.0, rng);
  EditProblem bad = p;
  bad.k1 = gaussian(7, 3, rng);
  EXPECT_THROW(memit_delta(bad), DimensionError);
  bad = p;
  bad.beta = 0.0;
  EXPECT_THROW(memit_delta(bad), std::invalid_argument);
  bad = p;
  bad.vhat1(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(alphaedit_delta(bad), NonFiniteError);
  bad = p;
  bad.k1 = DenseMatrix(8, 0);
  bad.vhat1 = DenseMatrix(4, 0);
  EXPECT_THROW(memit_delta(bad), std::invalid_argument);
  EXPECT_THROW(alphaedit_delta(p, DenseMatrix::Identity(7, 7)), DimensionError);
}
