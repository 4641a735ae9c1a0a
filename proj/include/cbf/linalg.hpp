#pragma once

#include "cbf/common.hpp"

namespace cbf::linalg {

// Relative diagonal loading applied to every covariance inversion.
inline constexpr double kDefaultRidge = 1e-8;

// Complex Hermitian matrix. Construction projects onto the Hermitian part,
// so entries(i, j) == conj(entries(j, i)) and the diagonal is real.
class HermitianMatrix {
 public:
  HermitianMatrix() = default;
  explicit HermitianMatrix(Eigen::Index dim) : m_(CMatrix::Zero(dim, dim)) {}
  explicit HermitianMatrix(const CMatrix& a);

  static HermitianMatrix identity(Eigen::Index dim);
  static HermitianMatrix diagonal(const RVector& d);

  Eigen::Index dim() const { return m_.rows(); }
  const CMatrix& matrix() const { return m_; }
  Complex operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
  double trace() const { return m_.diagonal().real().sum(); }

  // A + s * I
  HermitianMatrix loaded(double s) const;

 private:
  CMatrix m_;
};

// Solves (A + ridge * trace(A)/dim * I) X = B.
// Throws SingularMatrixError if the loaded matrix is numerically singular.
CMatrix hermitian_solve(const HermitianMatrix& a, const CMatrix& b, double ridge = kDefaultRidge);

struct EigenPair {
  CVector vector;   // unit norm, first nonzero entry real positive
  double value = 0; // eigenvalue of B^{-1} A
  int iterations = 0;
};

inline constexpr int kPowerIterationCap = 200;
inline constexpr double kPowerIterationTolerance = 1e-10;

// Principal eigenvector of B^{-1} A (largest real eigenvalue) for Hermitian A
// and Hermitian positive-definite B. B is Cholesky-factored, the whitened
// problem L^{-1} A L^{-H} is solved by power iteration and mapped back.
// Throws ConvergenceError past the iteration cap, InvalidArgument if B is
// not positive-definite.
EigenPair max_generalized_eigvec(const HermitianMatrix& a, const HermitianMatrix& b);

// Scales v so its first entry with non-negligible magnitude is real positive.
void fix_phase(CVector& v);

}  // namespace cbf::linalg
