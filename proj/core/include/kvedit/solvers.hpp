#pragma once

// Closed-form linear edits of a single FFN out-projection.
//
// Both solvers produce Δ = R1·K1ᵀ·S for a method-specific symmetric kernel S,
// so an edited layer answers a query k with W·k + R1·ω, ω = K1ᵀ·S·k: a
// weighted average of the stored residuals.

#include "kvedit/tensor.hpp"

#include <string>
#include <string_view>

namespace kvedit {

enum class EditMethod { kMemit, kAlphaEdit };

std::string_view to_string(EditMethod m);

inline constexpr double kDefaultBeta = 1.0;

struct EditProblem {
  DenseMatrix w;      ///< d2 x d1 out-projection being edited
  DenseMatrix k1;     ///< d1 x m keys of the edited facts
  DenseMatrix vhat1;  ///< d2 x m target values
  DenseMatrix k0;     ///< d1 x n preserved-knowledge keys (n may be 0)
  double beta = kDefaultBeta;

  Index d1() const { return w.cols(); }
  Index d2() const { return w.rows(); }
  Index edits() const { return k1.cols(); }

  /// Throws DimensionError / NonFiniteError / std::invalid_argument.
  void validate() const;
};

struct SolverProvenance {
  EditMethod method = EditMethod::kMemit;
  double beta = kDefaultBeta;
  SpdSolveReport solve;
  /// AlphaEdit only: rank of P and the eigenvalues it was cut from.
  Index projector_rank = -1;
  DenseVector projector_spectrum;
};

struct EditSolution {
  DenseMatrix delta;      ///< d2 x d1
  EditMethod method = EditMethod::kMemit;
  DenseMatrix kernel;     ///< d1 x d1, S1 or S2
  /// m x d1 score operator K1ᵀ·S, taken from the same factorization as Δ.
  /// Δ = R1·scores exactly, so ω = scores·k reproduces Δ·k even when S is
  /// ridge-regularized and badly conditioned.
  DenseMatrix scores;
  DenseMatrix residuals;  ///< d2 x m, R1
  DenseMatrix keys;       ///< d1 x m, K1 (needed to form ω)
  SolverProvenance provenance;
};

/// R1 = V̂1 − W·K1.
DenseMatrix residual_matrix(const DenseMatrix& w, const DenseMatrix& k1, const DenseMatrix& vhat1);

/// Δ = R1·K1ᵀ·(K1·K1ᵀ + β·K0·K0ᵀ)⁻¹.
EditSolution memit_delta(const EditProblem& p);

/// Δ = R1·K1ᵀ·Pᵀ·(P·K1·K1ᵀ·Pᵀ + β·I)⁻¹·P, with P a projector for p.k0.
EditSolution alphaedit_delta(const EditProblem& p, const DenseMatrix& projector);

/// Convenience: builds P with null_space_projector(p.k0, eps_rank) first.
EditSolution alphaedit_delta(const EditProblem& p, double eps_rank = kDefaultRankCutoff);

/// ω = K1ᵀ·S·k, one score per edited fact, evaluated as scores·k.
DenseVector weighted_scores(const EditSolution& sol, const DenseVector& k);

/// ‖(W+Δ)·K1 − V̂1‖² + β·‖Δ·K0‖²; the MEMIT objective.
double memit_objective(const EditProblem& p, const DenseMatrix& delta);

/// ‖(W+Δ)·K1 − V̂1‖² + β·‖Δ‖²; the AlphaEdit objective evaluated at Δ = δ·P.
double alphaedit_objective(const EditProblem& p, const DenseMatrix& delta);

}  // namespace kvedit
