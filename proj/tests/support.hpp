#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "cbf/common.hpp"
#include "cbf/aad.hpp"
#include "cbf/linalg.hpp"
#include "cbf/scene.hpp"

namespace cbf::test {

inline CMatrix random_complex(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  CMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = Complex(n(rng), n(rng));
  return m;
}

inline CVector random_vector(Eigen::Index n, std::mt19937_64& rng) { return random_complex(n, 1, rng); }

// Well-conditioned Hermitian positive-definite matrix.
inline linalg::HermitianMatrix random_hpd(Eigen::Index dim, std::mt19937_64& rng) {
  const CMatrix x = random_complex(dim, 2 * dim + 4, rng);
  return linalg::HermitianMatrix(CMatrix(x * x.adjoint() / static_cast<double>(x.cols()) +
                                         0.1 * CMatrix::Identity(dim, dim)));
}

inline std::vector<double> random_signal(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

// Minimizer of q^H R q subject to C^H q = p from the dense KKT system
// [R -C; C^H 0] [q; mu] = [0; p].
inline CVector kkt_solve(const CMatrix& r, const CMatrix& c, const CVector& p) {
  const auto m = r.rows(), u = c.cols();
  CMatrix kkt = CMatrix::Zero(m + u, m + u);
  kkt.topLeftCorner(m, m) = r;
  kkt.topRightCorner(m, u) = -c;
  kkt.bottomLeftCorner(u, m) = c.adjoint();
  CVector rhs = CVector::Zero(m + u);
  rhs.tail(u) = p;
  return kkt.fullPivLu().solve(rhs).head(m);
}

struct SyntheticTrial {
  RMatrix eeg;
  std::vector<aad::Envelope> candidates;
  std::size_t attended = 0;
};

// Two speech-like talkers, their envelopes, and EEG of one listener tracking
// one of them.
inline SyntheticTrial make_trial(std::uint64_t seed, double duration_s, double snr_db, std::size_t attended,
                                 std::uint64_t listener = 77, std::size_t channels = 16) {
  SyntheticTrial t;
  for (std::uint64_t i = 0; i < 2; ++i) {
    const auto speech = scene::synthesize_speech_like(duration_s, 16000.0, seed * 1000 + i);
    t.candidates.push_back(aad::extract_envelope(speech, 16000.0));
  }
  t.attended = attended;
  t.eeg = aad::synthesize_eeg(t.candidates[attended], t.candidates[1 - attended], channels, snr_db, listener,
                              seed * 1000 + 7);
  return t;
}

// Angle between complex lines, stable near zero.
inline double angle_between(const CVector& a, const CVector& b) {
  const CVector u = a.normalized(), v = b.normalized();
  const Complex c = u.dot(v);
  return std::atan2((v - u * c).norm(), std::abs(c));
}

}  // namespace cbf::test
