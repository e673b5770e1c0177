#include "kvedit/tensor.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <algorithm>
#include <sstream>

namespace kvedit {

void throw_non_finite(std::string_view what) {
  throw NonFiniteError(std::string(what) + ": non-finite entry");
}

void require_same_rows(Index a, Index b, std::string_view what) {
  if (a != b) {
    std::ostringstream os;
    os << what << ": dimension mismatch (" << a << " vs " << b << ")";
    throw DimensionError(os.str());
  }
}

namespace {

bool usable(const Eigen::LLT<DenseMatrix>& llt) {
  return llt.info() == Eigen::Success && llt.rcond() > kSingularRcond;
}

}  // namespace

SpdSolution solve_spd(const DenseMatrix& a, const DenseMatrix& b, double ridge_scale) {
  if (a.rows() != a.cols()) {
    throw DimensionError("solve_spd: A must be square");
  }
  require_same_rows(a.rows(), b.rows(), "solve_spd");
  require_finite(a, "solve_spd A");
  require_finite(b, "solve_spd B");

  SpdSolution out;
  if (a.rows() == 0) {
    out.x = DenseMatrix::Zero(0, b.cols());
    out.report.rcond = 1.0;
    return out;
  }

  Eigen::LLT<DenseMatrix> llt(a);
  if (!usable(llt)) {
    const double trace = a.trace();
    double ridge = ridge_scale * trace / static_cast<double>(a.rows());
    if (!(ridge > 0.0)) {
      ridge = ridge_scale;
    }
    DenseMatrix shifted = a;
    shifted.diagonal().array() += ridge;
    llt.compute(shifted);
    out.report.ridge_applied = true;
    out.report.ridge = ridge;
    if (llt.info() != Eigen::Success) {
      std::ostringstream os;
      os << "solve_spd: matrix is not positive definite even with ridge " << ridge
         << " (trace " << trace << ", n " << a.rows() << ")";
      throw SingularSystemError(os.str(), 0.0);
    }
    if (llt.rcond() <= kSingularRcond) {
      std::ostringstream os;
      os << "solve_spd: system singular after ridge " << ridge
         << "; rcond estimate " << llt.rcond();
      throw SingularSystemError(os.str(), llt.rcond());
    }
  }
  out.report.rcond = llt.rcond();
  out.x = llt.solve(b);
  return out;
}

NullSpaceProjector null_space_projector(const DenseMatrix& k0, double eps_rank) {
  if (!(eps_rank > 0.0)) {
    throw std::invalid_argument("null_space_projector: eps_rank must be positive");
  }
  require_finite(k0, "null_space_projector K0");

  const Index d1 = k0.rows();
  NullSpaceProjector out;
  if (k0.cols() == 0 || k0.isZero(0.0)) {
    out.p = DenseMatrix::Identity(d1, d1);
    out.null_rank = d1;
    out.gram_rank = 0;
    out.spectrum = DenseVector::Zero(d1);
    return out;
  }

  // Left singular vectors of K0 are the eigenvectors of K0·K0ᵀ with
  // eigenvalues σ². Working on K0 directly keeps P·K0 at machine precision.
  Eigen::JacobiSVD<DenseMatrix> svd(k0, Eigen::ComputeFullU);
  const DenseVector& sigma = svd.singularValues();

  out.spectrum = DenseVector::Zero(d1);
  out.spectrum.head(sigma.size()) = sigma.array().square().matrix();
  const double cutoff = eps_rank * out.spectrum(0);

  Index kept_from = 0;
  while (kept_from < d1 && out.spectrum(kept_from) >= cutoff) {
    ++kept_from;
  }
  out.gram_rank = kept_from;
  out.null_rank = d1 - kept_from;

  const auto null_basis = svd.matrixU().rightCols(out.null_rank);
  out.p = null_basis * null_basis.transpose();
  out.p = 0.5 * (out.p + out.p.transpose()).eval();
  return out;
}

double cosine(const Eigen::Ref<const DenseVector>& a, const Eigen::Ref<const DenseVector>& b) {
  require_same_rows(a.size(), b.size(), "cosine");
  const double na = a.norm();
  const double nb = b.norm();
  if (na < kCosineZeroNorm || nb < kCosineZeroNorm) {
    return 0.0;
  }
  const double c = a.dot(b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

double relative_error(const Eigen::Ref<const DenseMatrix>& a,
                      const Eigen::Ref<const DenseMatrix>& b) {
  const double diff = (a - b).norm();
  const double base = b.norm();
  if (base == 0.0) {
    return diff == 0.0 ? 0.0 : diff;
  }
  return diff / base;
}

}  // namespace kvedit
