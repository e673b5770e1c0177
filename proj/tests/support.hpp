#pragma once

// Independent reference implementations the tests compare against.

#include "kvedit/kvdb.hpp"
#include "kvedit/solvers.hpp"

#include <cmath>
#include <filesystem>
#include <optional>
#include <random>
#include <string>

namespace kvedit::testing {

inline DenseMatrix gaussian(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  DenseMatrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  }
  return m;
}

inline EditProblem random_problem(Index d1, Index d2, Index m, Index n, double beta,
                                  std::mt19937_64& rng) {
  EditProblem p;
  p.w = gaussian(d2, d1, rng, 0.3);
  p.k1 = gaussian(d1, m, rng);
  p.vhat1 = gaussian(d2, m, rng);
  p.k0 = gaussian(d1, n, rng);
  p.beta = beta;
  return p;
}

// Minimizes tr(X·H·Xᵀ) − 2·tr(X·Gᵀ) over the rows of X by conjugate gradient
// on the quadratic, starting from zero. apply_h must be symmetric PSD; when it
// is singular the iterates stay in its range, which gives the minimum-norm
// minimizer.
template <class ApplyH>
DenseMatrix cg_minimize(const ApplyH& apply_h, const DenseMatrix& g, int max_iters = 2000,
                        double tol = 1e-15) {
  DenseMatrix x = DenseMatrix::Zero(g.rows(), g.cols());
  for (Index row = 0; row < g.rows(); ++row) {
    DenseVector xi = DenseVector::Zero(g.cols());
    DenseVector r = g.row(row).transpose();
    DenseVector dir = r;
    double rr = r.squaredNorm();
    const double stop = tol * tol * std::max(rr, 1e-300);
    for (int it = 0; it < max_iters && rr > stop; ++it) {
      const DenseVector hd = apply_h(dir);
      const double curv = dir.dot(hd);
      if (!(curv > 0.0)) break;
      const double alpha = rr / curv;
      xi += alpha * dir;
      r -= alpha * hd;
      const double rr_next = r.squaredNorm();
      dir = r + (rr_next / rr) * dir;
      rr = rr_next;
    }
    x.row(row) = xi.transpose();
  }
  return x;
}

// MEMIT objective ‖(W+Δ)K1 − V̂1‖² + β‖ΔK0‖²: H = K1K1ᵀ + βK0K0ᵀ, G = R1K1ᵀ.
inline DenseMatrix memit_oracle(const EditProblem& p) {
  const DenseMatrix r1 = p.vhat1 - p.w * p.k1;
  auto apply = [&](const DenseVector& v) -> DenseVector {
    DenseVector out = p.k1 * (p.k1.transpose() * v);
    if (p.k0.cols() > 0) out += p.beta * (p.k0 * (p.k0.transpose() * v));
    return out;
  };
  return cg_minimize(apply, r1 * p.k1.transpose());
}

// AlphaEdit objective over Δ = δP: H = P(K1K1ᵀ + βI)P, G = R1K1ᵀP.
inline DenseMatrix alphaedit_oracle(const EditProblem& p, const DenseMatrix& proj) {
  const DenseMatrix r1 = p.vhat1 - p.w * p.k1;
  auto apply = [&](const DenseVector& v) -> DenseVector {
    const DenseVector pv = proj * v;
    return proj * (p.k1 * (p.k1.transpose() * pv) + p.beta * pv);
  };
  return cg_minimize(apply, r1 * p.k1.transpose() * proj);
}

struct ScanResult {
  bool hit = false;
  std::optional<std::size_t> entry;
  DenseVector residual;
};

// Exhaustive scan written without the database's unit-key cache.
inline ScanResult brute_force_query(const NeuralKVDatabase& db, const DenseVector& k) {
  ScanResult out;
  out.residual = DenseVector::Zero(db.d2());
  const double kn = k.norm();
  double best = -2.0;
  for (std::size_t e = 0; e < db.size(); ++e) {
    const DenseVector key = db.key(e);
    const double c = kn < 1e-12 ? 0.0 : key.dot(k) / (key.norm() * kn);
    if (c > best) {
      best = c;
      out.entry = e;
    }
  }
  if (out.entry && best > db.gamma()) {
    out.hit = true;
    out.residual = db.residual(*out.entry);
  }
  return out;
}

// Central difference of f along coordinate i.
template <class F>
double central_difference(const F& f, const DenseVector& x, Index i, double h) {
  DenseVector a = x;
  DenseVector b = x;
  a(i) += h;
  b(i) -= h;
  return (f(a) - f(b)) / (2.0 * h);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("kvedit-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace kvedit::testing
