#include "cbf/linalg.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace cbf::linalg {

HermitianMatrix::HermitianMatrix(const CMatrix& a) {
  if (a.rows() != a.cols()) {
    throw InvalidArgument("HermitianMatrix: matrix is not square");
  }
  m_ = 0.5 * (a + a.adjoint());
  for (Eigen::Index i = 0; i < m_.rows(); ++i) {
    m_(i, i) = Complex(m_(i, i).real(), 0.0);
  }
}

HermitianMatrix HermitianMatrix::identity(Eigen::Index dim) {
  return HermitianMatrix(CMatrix::Identity(dim, dim));
}

HermitianMatrix HermitianMatrix::diagonal(const RVector& d) {
  CMatrix m = CMatrix::Zero(d.size(), d.size());
  m.diagonal() = d.cast<Complex>();
  return HermitianMatrix(m);
}

HermitianMatrix HermitianMatrix::loaded(double s) const {
  HermitianMatrix out = *this;
  for (Eigen::Index i = 0; i < out.m_.rows(); ++i) out.m_(i, i) += s;
  return out;
}

CMatrix hermitian_solve(const HermitianMatrix& a, const CMatrix& b, double ridge) {
  if (ridge < 0) throw InvalidArgument("hermitian_solve: ridge must be nonnegative");
  if (b.rows() != a.dim()) {
    std::ostringstream os;
    os << "hermitian_solve: right-hand side has " << b.rows() << " rows, matrix dim is " << a.dim();
    throw InvalidArgument(os.str());
  }
  const Eigen::Index n = a.dim();
  if (n == 0) return CMatrix(0, b.cols());

  CMatrix loaded = a.matrix();
  if (ridge > 0) {
    const double shift = ridge * a.trace() / static_cast<double>(n);
    loaded.diagonal().array() += shift;
  }
  if (!loaded.allFinite()) throw SingularMatrixError("hermitian_solve: non-finite matrix");

  const double eps = std::numeric_limits<double>::epsilon();
  Eigen::LLT<CMatrix> llt(loaded);
  if (llt.info() == Eigen::Success) {
    const auto d = llt.matrixLLT().diagonal().real().cwiseAbs2();
    if (d.minCoeff() > eps * static_cast<double>(n) * d.maxCoeff()) {
      return llt.solve(b);
    }
  }
  // Indefinite or borderline: pivoted LU with an explicit rank check.
  Eigen::FullPivLU<CMatrix> lu(loaded);
  lu.setThreshold(eps * static_cast<double>(n));
  if (!lu.isInvertible()) {
    std::ostringstream os;
    os << "hermitian_solve: matrix of dim " << n << " is numerically singular (rank " << lu.rank() << ")";
    throw SingularMatrixError(os.str());
  }
  return lu.solve(b);
}

void fix_phase(CVector& v) {
  const double norm = v.norm();
  if (norm == 0) return;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double mag = std::abs(v(i));
    if (mag > 1e-12 * norm) {
      v *= std::conj(v(i)) / mag;
      v(i) = Complex(std::abs(v(i)), 0.0);
      return;
    }
  }
}

namespace {

// Eigenvalues of the whitened matrix are shifted to be nonnegative so the
// dominant eigenvalue is the one with the largest real part.
double gershgorin_shift(const CMatrix& c) {
  double lower = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    double radius = 0;
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      if (j != i) radius += std::abs(c(i, j));
    }
    lower = std::min(lower, c(i, i).real() - radius);
  }
  return lower < 0 ? -lower : 0.0;
}

// Each power step applies C^16; squaring is renormalized to avoid overflow.
constexpr int kSquarings = 4;

}  // namespace

EigenPair max_generalized_eigvec(const HermitianMatrix& a, const HermitianMatrix& b) {
  const Eigen::Index n = a.dim();
  if (b.dim() != n) throw InvalidArgument("max_generalized_eigvec: dimension mismatch");
  if (n == 0) throw InvalidArgument("max_generalized_eigvec: empty matrices");

  Eigen::LLT<CMatrix> llt(b.matrix());
  if (llt.info() != Eigen::Success) {
    throw InvalidArgument("max_generalized_eigvec: B is not positive-definite");
  }
  const auto lower = llt.matrixL();
  // C = L^{-1} A L^{-H}
  CMatrix half = lower.solve(a.matrix());
  CMatrix whitened = lower.solve(half.adjoint()).adjoint();
  whitened = 0.5 * (whitened + whitened.adjoint()).eval();

  const double shift = gershgorin_shift(whitened);
  CMatrix power = whitened;
  power.diagonal().array() += shift;
  for (int s = 0; s < kSquarings; ++s) {
    power = (power * power).eval();
    const double scale = power.norm();
    if (scale > 0) power /= scale;
  }

  CVector v = CVector::Zero(n);
  if (power.norm() == 0) {
    v(0) = 1.0;
  } else {
    Eigen::Index start = 0;
    power.diagonal().real().maxCoeff(&start);
    v = power.col(start);
    v.normalize();
  }

  int iterations = 0;
  bool converged = false;
  for (iterations = 1; iterations <= kPowerIterationCap; ++iterations) {
    CVector next = power * v;
    const double norm = next.norm();
    if (norm == 0) {
      converged = true;
      break;
    }
    next /= norm;
    const Complex overlap = v.dot(next);  // v^H next
    if (std::abs(overlap) > 0) next *= std::conj(overlap) / std::abs(overlap);
    const double change = (next - v).norm();
    v = next;
    if (change < kPowerIterationTolerance) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream os;
    os << "max_generalized_eigvec: power iteration did not reach tolerance "
       << kPowerIterationTolerance << " within " << kPowerIterationCap << " iterations";
    throw ConvergenceError(os.str());
  }

  EigenPair out;
  out.value = v.dot(whitened * v).real();
  out.vector = lower.adjoint().solve(v);
  out.vector.normalize();
  fix_phase(out.vector);
  out.iterations = iterations;
  return out;
}

}  // namespace cbf::linalg
