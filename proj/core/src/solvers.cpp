#include "kvedit/solvers.hpp"

#include <cmath>
#include <stdexcept>

namespace kvedit {

std::string_view to_string(EditMethod m) {
  switch (m) {
    case EditMethod::kMemit:
      return "memit";
    case EditMethod::kAlphaEdit:
      return "alphaedit";
  }
  return "unknown";
}

void EditProblem::validate() const {
  require_same_rows(k1.rows(), d1(), "EditProblem K1 rows vs W cols");
  require_same_rows(vhat1.rows(), d2(), "EditProblem V̂1 rows vs W rows");
  require_same_rows(vhat1.cols(), k1.cols(), "EditProblem V̂1 cols vs K1 cols");
  require_same_rows(k0.rows(), d1(), "EditProblem K0 rows vs W cols");
  if (k1.cols() < 1) {
    throw std::invalid_argument("EditProblem: at least one edited key is required");
  }
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw std::invalid_argument("EditProblem: beta must be finite and positive");
  }
  require_finite(w, "EditProblem W");
  require_finite(k1, "EditProblem K1");
  require_finite(vhat1, "EditProblem V̂1");
  require_finite(k0, "EditProblem K0");
}

DenseMatrix residual_matrix(const DenseMatrix& w, const DenseMatrix& k1, const DenseMatrix& vhat1) {
  require_same_rows(k1.rows(), w.cols(), "residual_matrix K1 rows vs W cols");
  require_same_rows(vhat1.rows(), w.rows(), "residual_matrix V̂1 rows vs W rows");
  require_same_rows(vhat1.cols(), k1.cols(), "residual_matrix V̂1 cols vs K1 cols");
  require_finite(w, "residual_matrix W");
  require_finite(k1, "residual_matrix K1");
  require_finite(vhat1, "residual_matrix V̂1");
  return vhat1 - w * k1;
}

namespace {

// Solves A·[X | S] = [K1 | I] with one factorization. A is symmetric, so
// Xᵀ = K1ᵀ·A⁻¹ is the score operator and S = A⁻¹ the kernel.
struct KernelSolve {
  DenseMatrix scores;
  DenseMatrix kernel;
  SpdSolveReport report;
};

KernelSolve solve_with_kernel(const DenseMatrix& a, const DenseMatrix& k1) {
  const Index d1 = a.rows();
  DenseMatrix rhs(d1, k1.cols() + d1);
  rhs.leftCols(k1.cols()) = k1;
  rhs.rightCols(d1).setIdentity();
  SpdSolution sol = solve_spd(a, rhs);
  KernelSolve out;
  out.scores = sol.x.leftCols(k1.cols()).transpose();
  const auto s = sol.x.rightCols(d1);
  out.kernel = 0.5 * (s + s.transpose());
  out.report = sol.report;
  return out;
}

}  // namespace

EditSolution memit_delta(const EditProblem& p) {
  p.validate();
  EditSolution out;
  out.method = EditMethod::kMemit;
  out.keys = p.k1;
  out.residuals = p.vhat1 - p.w * p.k1;

  DenseMatrix a = p.k1 * p.k1.transpose();
  if (p.k0.cols() > 0) {
    a.noalias() += p.beta * (p.k0 * p.k0.transpose());
  }
  KernelSolve ks = solve_with_kernel(a, p.k1);
  out.scores = std::move(ks.scores);
  out.delta = out.residuals * out.scores;
  out.kernel = std::move(ks.kernel);
  out.provenance.method = EditMethod::kMemit;
  out.provenance.beta = p.beta;
  out.provenance.solve = ks.report;
  return out;
}

EditSolution alphaedit_delta(const EditProblem& p, const DenseMatrix& projector) {
  p.validate();
  if (projector.rows() != p.d1() || projector.cols() != p.d1()) {
    throw DimensionError("alphaedit_delta: projector must be d1 x d1");
  }
  require_finite(projector, "alphaedit_delta P");

  EditSolution out;
  out.method = EditMethod::kAlphaEdit;
  out.keys = p.k1;
  out.residuals = p.vhat1 - p.w * p.k1;

  const DenseMatrix pk1 = projector * p.k1;
  DenseMatrix b = pk1 * pk1.transpose();
  b.diagonal().array() += p.beta;

  // B⁻¹·[P·K1 | P]; S2 = Pᵀ·B⁻¹·P and K1ᵀ·S2 = (B⁻¹·P·K1)ᵀ·P.
  const Index d1 = p.d1();
  const Index m = p.edits();
  DenseMatrix rhs(d1, m + d1);
  rhs.leftCols(m) = pk1;
  rhs.rightCols(d1) = projector;
  SpdSolution sol = solve_spd(b, rhs);

  out.scores = sol.x.leftCols(m).transpose() * projector;
  out.delta = out.residuals * out.scores;
  const DenseMatrix s = projector.transpose() * sol.x.rightCols(d1);
  out.kernel = 0.5 * (s + s.transpose());

  out.provenance.method = EditMethod::kAlphaEdit;
  out.provenance.beta = p.beta;
  out.provenance.solve = sol.report;
  out.provenance.projector_rank =
      static_cast<Index>(std::llround(projector.trace()));
  return out;
}

EditSolution alphaedit_delta(const EditProblem& p, double eps_rank) {
  p.validate();
  NullSpaceProjector proj = null_space_projector(p.k0, eps_rank);
  EditSolution out = alphaedit_delta(p, proj.p);
  out.provenance.projector_rank = proj.null_rank;
  out.provenance.projector_spectrum = std::move(proj.spectrum);
  return out;
}

DenseVector weighted_scores(const EditSolution& sol, const DenseVector& k) {
  require_same_rows(k.size(), sol.scores.cols(), "weighted_scores");
  require_finite(k, "weighted_scores k");
  return sol.scores * k;
}

double memit_objective(const EditProblem& p, const DenseMatrix& delta) {
  const double fit = ((p.w + delta) * p.k1 - p.vhat1).squaredNorm();
  const double keep = p.k0.cols() > 0 ? (delta * p.k0).squaredNorm() : 0.0;
  return fit + p.beta * keep;
}

double alphaedit_objective(const EditProblem& p, const DenseMatrix& delta) {
  return ((p.w + delta) * p.k1 - p.vhat1).squaredNorm() + p.beta * delta.squaredNorm();
}

}  // namespace kvedit
