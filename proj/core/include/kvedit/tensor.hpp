#pragma once

// Dense kernels shared by every other module: SPD solves, null-space
// projectors and cosine similarity. Everything here is a pure function.

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <string_view>

namespace kvedit {

/// Column-major 64-bit matrix. Every public operation rejects NaN/Inf input.
using DenseMatrix = Eigen::MatrixXd;
using DenseVector = Eigen::VectorXd;
using Index = Eigen::Index;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a system stays singular even after the ridge fallback.
class SingularSystemError : public std::runtime_error {
 public:
  SingularSystemError(const std::string& what, double rcond)
      : std::runtime_error(what), rcond_(rcond) {}
  double rcond() const noexcept { return rcond_; }

 private:
  double rcond_;
};

inline constexpr double kDefaultRankCutoff = 1e-10;
/// Ridge added on singular SPD systems, as a multiple of trace(A)/rows.
inline constexpr double kDefaultRidgeScale = 1e-8;
/// Below this reciprocal condition estimate an SPD factorization is treated
/// as singular and retried with the ridge.
inline constexpr double kSingularRcond = 1e-13;
inline constexpr double kCosineZeroNorm = 1e-12;

[[noreturn]] void throw_non_finite(std::string_view what);

template <class Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, std::string_view what) {
  if (!m.allFinite()) throw_non_finite(what);
}
void require_same_rows(Index a, Index b, std::string_view what);

struct SpdSolveReport {
  bool ridge_applied = false;
  double ridge = 0.0;
  /// Reciprocal condition estimate of the factorization actually used.
  double rcond = 0.0;
};

struct SpdSolution {
  DenseMatrix x;
  SpdSolveReport report;
};

/// Solves A·X = B for symmetric positive (semi-)definite A by Cholesky
/// factorization. If the factorization fails or is numerically singular,
/// ridge_scale·trace(A)/rows is added to the diagonal and the event is
/// recorded in the report. Throws SingularSystemError if that also fails.
SpdSolution solve_spd(const DenseMatrix& a, const DenseMatrix& b,
                      double ridge_scale = kDefaultRidgeScale);

struct NullSpaceProjector {
  DenseMatrix p;            ///< d1 x d1, symmetric and idempotent
  Index null_rank = 0;      ///< rank(P)
  Index gram_rank = 0;      ///< rank(K0·K0ᵀ) at the cutoff
  DenseVector spectrum;     ///< eigenvalues of K0·K0ᵀ, descending
};

/// Orthogonal projector onto the null space of K0ᵀ, i.e. P with P·K0 ≈ 0.
/// Eigenvectors of the Gram K0·K0ᵀ whose eigenvalue falls below
/// eps_rank × (largest eigenvalue) are kept. An empty K0 gives P = I.
NullSpaceProjector null_space_projector(const DenseMatrix& k0,
                                        double eps_rank = kDefaultRankCutoff);

/// aᵀb / (‖a‖‖b‖); 0 when either norm is below 1e-12.
double cosine(const Eigen::Ref<const DenseVector>& a,
              const Eigen::Ref<const DenseVector>& b);

/// ‖a − b‖_F / ‖b‖_F, with 0/0 defined as 0.
double relative_error(const Eigen::Ref<const DenseMatrix>& a,
                      const Eigen::Ref<const DenseMatrix>& b);

}  // namespace kvedit
