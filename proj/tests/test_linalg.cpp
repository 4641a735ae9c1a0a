#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "cbf/linalg.hpp"
#include "support.hpp"

using namespace cbf;
using linalg::HermitianMatrix;

TEST_CASE("HermitianMatrix projects onto the Hermitian part") {
  std::mt19937_64 rng(1);
  const CMatrix a = test::random_complex(4, 4, rng);
  const HermitianMatrix h(a);
  CHECK((h.matrix() - h.matrix().adjoint()).norm() == 0.0);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(h(i, i).imag() == 0.0);
  CHECK((h.matrix() - 0.5 * (a + a.adjoint())).norm() < 1e-14);
}

TEST_CASE("hermitian_solve identity and diagonal cases") {
  std::mt19937_64 rng(2);
  const CMatrix b = test::random_complex(3, 2, rng);
  CHECK((linalg::hermitian_solve(HermitianMatrix::identity(3), b, 0.0) - b).norm() == doctest::Approx(0.0));

  RVector d(2);
  d << 2.0, 4.0;
  const CMatrix x = linalg::hermitian_solve(HermitianMatrix::diagonal(d), CMatrix::Ones(2, 1), 0.0);
  CHECK(x(0, 0).real() == doctest::Approx(0.5));
  CHECK(x(1, 0).real() == doctest::Approx(0.25));
  CHECK(std::abs(x(0, 0).imag()) < 1e-15);
}

TEST_CASE("hermitian_solve matches a dense inverse") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = test::random_hpd(6, rng);
    const CMatrix b = test::random_complex(6, 3, rng);
    const CMatrix x = linalg::hermitian_solve(a, b, 0.0);
    const CMatrix oracle = a.matrix().fullPivLu().inverse() * b;
    CHECK((x - oracle).norm() / oracle.norm() < 1e-10);
    CHECK((a.matrix() * x - b).norm() / b.norm() < 1e-10);
  }
}

TEST_CASE("hermitian_solve applies relative loading") {
  std::mt19937_64 rng(4);
  const auto a = test::random_hpd(4, rng);
  const CMatrix b = test::random_complex(4, 1, rng);
  const double ridge = 0.3;
  const CMatrix x = linalg::hermitian_solve(a, b, ridge);
  const CMatrix loaded = a.matrix() + ridge * a.trace() / 4.0 * CMatrix::Identity(4, 4);
  CHECK((loaded * x - b).norm() / b.norm() < 1e-12);
}

TEST_CASE("hermitian_solve reports singular matrices") {
  HermitianMatrix zero(3);
  CHECK_THROWS_AS(linalg::hermitian_solve(zero, CMatrix::Ones(3, 1), 0.0), SingularMatrixError);
  CMatrix rank1 = CMatrix::Ones(3, 3);
  CHECK_THROWS_AS(linalg::hermitian_solve(HermitianMatrix(rank1), CMatrix::Ones(3, 1), 0.0), SingularMatrixError);
}

TEST_CASE("max_generalized_eigvec diagonal case") {
  RVector d(2);
  d << 3.0, 1.0;
  const auto p = linalg::max_generalized_eigvec(HermitianMatrix::diagonal(d), HermitianMatrix::identity(2));
  CHECK(p.value == doctest::Approx(3.0));
  CHECK(std::abs(p.vector(0) - Complex(1.0, 0.0)) < 1e-9);
  CHECK(std::abs(p.vector(1)) < 1e-9);
}

TEST_CASE("max_generalized_eigvec degenerate spectrum is deterministic") {
  std::mt19937_64 rng(5);
  const auto b = test::random_hpd(3, rng);
  const auto p = linalg::max_generalized_eigvec(b, b);
  CHECK(p.value == doctest::Approx(1.0));
  CHECK(p.vector.norm() == doctest::Approx(1.0));
  const auto q = linalg::max_generalized_eigvec(b, b);
  CHECK(p.vector == q.vector);
}

TEST_CASE("max_generalized_eigvec agrees with a dense generalized eigensolver") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = test::random_hpd(6, rng);
    const auto b = test::random_hpd(6, rng);
    const auto p = linalg::max_generalized_eigvec(a, b);
    Eigen::GeneralizedSelfAdjointEigenSolver<CMatrix> ges(a.matrix(), b.matrix());
    const CVector top = ges.eigenvectors().col(5);
    CHECK(test::angle_between(p.vector, top) < 1e-8);
    CHECK(p.value == doctest::Approx(ges.eigenvalues()(5)).epsilon(1e-10));
    // B^-1 A v = lambda v
    const CVector lhs = b.matrix().fullPivLu().solve(a.matrix() * p.vector);
    CHECK((lhs - p.value * p.vector).norm() <= 1e-8 * p.vector.norm());
    CHECK(p.vector.norm() == doctest::Approx(1.0));
  }
}

TEST_CASE("phase fixing makes the first nonzero entry real positive") {
  std::mt19937_64 rng(7);
  const auto a = test::random_hpd(5, rng);
  const auto b = test::random_hpd(5, rng);
  const auto p = linalg::max_generalized_eigvec(a, b);
  Eigen::Index first = 0;
  while (std::abs(p.vector(first)) < 1e-12) ++first;
  CHECK(p.vector(first).real() > 0);
  CHECK(std::abs(p.vector(first).imag()) < 1e-14);

  CVector v(3);
  v << Complex(0, 0), Complex(0, -2), Complex(1, 1);
  linalg::fix_phase(v);
  CHECK(v(1).real() == doctest::Approx(2.0));
  CHECK(std::abs(v(1).imag()) < 1e-15);
}

TEST_CASE("max_generalized_eigvec rejects an indefinite B") {
  RVector d(2);
  d << 1.0, -1.0;
  CHECK_THROWS_AS(linalg::max_generalized_eigvec(HermitianMatrix::identity(2), HermitianMatrix::diagonal(d)),
                  InvalidArgument);
}
