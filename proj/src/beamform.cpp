#include "cbf/beamform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "cbf/parallel.hpp"

namespace cbf::beamform {

void ConvBeamformerConfig::validate() const {
  if (delay < 1) throw ConfigError("beamformer: frame delay b must be at least 1");
  if (bands.empty()) throw ConfigError("beamformer: at least one filter band required");
  for (const auto& band : bands) {
    if (band.taps <= delay) {
      std::ostringstream os;
      os << "beamformer: filter length " << band.taps << " must exceed the frame delay " << delay;
      throw ConfigError(os.str());
    }
    if (!(band.lo_hz < band.hi_hz)) throw ConfigError("beamformer: empty filter band");
  }
  if (iterations < 1) throw ConfigError("beamformer: iterations must be at least 1");
  if (!(delta >= 0)) throw ConfigError("beamformer: delta must be nonnegative");
  if (!(lambda_floor > 0)) throw ConfigError("beamformer: lambda_floor must be positive");
  if (!(ridge >= 0)) throw ConfigError("beamformer: ridge must be nonnegative");
}

std::size_t ConvBeamformerConfig::filter_length(double freq_hz) const {
  for (const auto& band : bands) {
    if (freq_hz >= band.lo_hz && freq_hz < band.hi_hz) return band.taps;
  }
  return bands.back().taps;
}

CMatrix StackedObservation::stacked() const {
  CMatrix out(current.rows() + delayed.rows(), current.cols());
  out.topRows(current.rows()) = current;
  out.bottomRows(delayed.rows()) = delayed;
  return out;
}

StackedObservation stack_observations(const stft::MultichannelSpectrogram& spec, std::size_t bin,
                                      std::size_t taps, std::size_t delay) {
  if (delay < 1 || taps <= delay) {
    std::ostringstream os;
    os << "stack_observations: need 1 <= b < L_w, got b = " << delay << ", L_w = " << taps;
    throw ConfigError(os.str());
  }
  if (bin >= spec.bins()) throw InvalidArgument("stack_observations: bin out of range");
  const auto m = static_cast<Eigen::Index>(spec.channels());
  const auto k_total = static_cast<Eigen::Index>(spec.frames());
  StackedObservation obs;
  obs.taps = taps;
  obs.delay = delay;
  obs.current = spec.bin(bin);
  const auto lags = static_cast<Eigen::Index>(taps - delay);
  obs.delayed = CMatrix::Zero(m * lags, k_total);
  for (Eigen::Index j = 0; j < lags; ++j) {
    const Eigen::Index tau = static_cast<Eigen::Index>(delay) + j;
    if (tau >= k_total) break;
    obs.delayed.block(j * m, tau, m, k_total - tau) = obs.current.leftCols(k_total - tau);
  }
  return obs;
}

StackedObservation stack_observations(const stft::MultichannelSpectrogram& spec, std::size_t bin,
                                      const ConvBeamformerConfig& cfg, const stft::StftConfig& stft_cfg) {
  cfg.validate();
  return stack_observations(spec, bin, cfg.filter_length(stft_cfg.bin_frequency(bin)), cfg.delay);
}

namespace {

// scale * X diag(w) X^H via a Hermitian rank update, w >= 0.
CMatrix weighted_gram(const CMatrix& x, const RVector& w, double scale) {
  const CMatrix scaled = x * w.cwiseSqrt().asDiagonal();
  CMatrix out = CMatrix::Zero(x.rows(), x.rows());
  out.selfadjointView<Eigen::Lower>().rankUpdate(scaled, scale);
  return out.selfadjointView<Eigen::Lower>();
}

}  // namespace

WeightedCorrelations weighted_correlations(const StackedObservation& obs, std::span<const double> lambda) {
  const auto k = obs.current.cols();
  if (static_cast<Eigen::Index>(lambda.size()) != k) {
    throw InvalidArgument("weighted_correlations: one variance per frame required");
  }
  if (k == 0) throw InvalidArgument("weighted_correlations: no frames");
  RVector inv(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (!(lambda[static_cast<std::size_t>(i)] > 0)) {
      throw InvalidArgument("weighted_correlations: variances must be positive");
    }
    inv(i) = 1.0 / lambda[static_cast<std::size_t>(i)];
  }
  const double scale = 1.0 / static_cast<double>(k);
  WeightedCorrelations out;
  const CMatrix r_delayed = weighted_gram(obs.delayed, inv, scale);
  out.cross = scale * ((obs.delayed * inv.asDiagonal()) * obs.current.adjoint());
  const CMatrix r_current = weighted_gram(obs.current, inv, scale);
  out.delayed = HermitianMatrix(r_delayed);

  const auto m = obs.current.rows();
  const auto n = obs.delayed.rows();
  CMatrix full(m + n, m + n);
  full.topLeftCorner(m, m) = r_current;
  full.topRightCorner(m, n) = out.cross.adjoint();
  full.bottomLeftCorner(n, m) = out.cross;
  full.bottomRightCorner(n, n) = r_delayed;
  out.stacked = HermitianMatrix(full);
  return out;
}

CMatrix dereverberate(const StackedObservation& obs, const CMatrix& g) {
  if (g.rows() != obs.delayed.rows() || g.cols() != obs.current.rows()) {
    std::ostringstream os;
    os << "dereverberate: G is " << g.rows() << "x" << g.cols() << ", expected " << obs.delayed.rows()
       << "x" << obs.current.rows();
    throw InvalidArgument(os.str());
  }
  return obs.current - g.adjoint() * obs.delayed;
}

CVector retf_from_covariances(const HermitianMatrix& target, const HermitianMatrix& rest,
                              std::size_t reference_mic, double ridge) {
  if (reference_mic >= static_cast<std::size_t>(target.dim())) {
    throw InvalidArgument("estimate_retf: reference microphone out of range");
  }
  const HermitianMatrix loaded = rest.loaded(ridge * rest.trace() / static_cast<double>(rest.dim()));
  const auto principal = linalg::max_generalized_eigvec(target, loaded);
  CVector a = loaded.matrix() * principal.vector;
  const Complex ref = a(static_cast<Eigen::Index>(reference_mic));
  if (!(std::abs(ref) > 1e-12 * a.norm())) {
    throw DegenerateMaskError("estimate_retf: RETF vanishes at the reference microphone");
  }
  return a / ref;
}

CVector estimate_retf(const CMatrix& frames, std::span<const double> mask, std::size_t reference_mic,
                      double ridge) {
  const auto k = frames.cols();
  if (static_cast<Eigen::Index>(mask.size()) != k) {
    throw InvalidArgument("estimate_retf: one mask value per frame required");
  }
  RVector gamma(k), rest(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    gamma(i) = mask[static_cast<std::size_t>(i)];
    rest(i) = 1.0 - gamma(i);
  }
  const double sum_gamma = gamma.sum();
  const double sum_rest = rest.sum();
  if (!(sum_gamma > 0) || !(sum_rest > 0)) {
    throw DegenerateMaskError("estimate_retf: mask leaves no target or no complement frames");
  }
  const CMatrix r_t = (frames * gamma.asDiagonal()) * frames.adjoint() / sum_gamma;
  const CMatrix r_n = (frames * rest.asDiagonal()) * frames.adjoint() / sum_rest;
  if (r_t.isZero(0.0) || r_n.isZero(0.0)) {
    throw DegenerateMaskError("estimate_retf: target or complement covariance is all zero");
  }
  return retf_from_covariances(HermitianMatrix(r_t), HermitianMatrix(r_n), reference_mic, ridge);
}

CVector wmpdr_solve(const HermitianMatrix& r, const CVector& a, double ridge) {
  if (a.size() != r.dim()) throw InvalidArgument("wmpdr_solve: dimension mismatch");
  if (a.isZero(0.0)) throw InvalidArgument("wmpdr_solve: steering vector is zero");
  const CVector x = linalg::hermitian_solve(r, a, ridge);
  const Complex denom = a.dot(x);  // a^H R^{-1} a
  if (!(std::abs(denom) > 0)) throw SingularMatrixError("wmpdr_solve: a^H R^{-1} a vanishes");
  return x / std::conj(denom);
}

namespace {

double constraint_condition(const CMatrix& c) {
  CMatrix normalized = c;
  for (Eigen::Index j = 0; j < c.cols(); ++j) {
    const double n = c.col(j).norm();
    if (n == 0) return std::numeric_limits<double>::infinity();
    normalized.col(j) /= n;
  }
  const CMatrix gram = normalized.adjoint() * normalized;
  Eigen::SelfAdjointEigenSolver<CMatrix> es(gram, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  return lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
}

}  // namespace

CVector wlcmp_solve(const HermitianMatrix& r, const CMatrix& c, const CVector& p, double ridge) {
  if (c.rows() != r.dim()) throw InvalidArgument("wlcmp_solve: constraint rows differ from covariance dim");
  if (p.size() != c.cols()) throw InvalidArgument("wlcmp_solve: one response per constraint required");
  if (c.cols() == 0) throw InvalidArgument("wlcmp_solve: empty constraint set");
  if (c.cols() == 1) {
    // p = [p0]: scaled distortionless solution.
    return wmpdr_solve(r, c.col(0), ridge) * std::conj(p(0));
  }
  if (c.cols() > c.rows()) {
    std::ostringstream os;
    os << "wlcmp_solve: " << c.cols() << " constraints exceed " << c.rows() << " degrees of freedom";
    throw RankDeficientError(os.str(), std::numeric_limits<double>::infinity());
  }
  const double cond = constraint_condition(c);
  if (!(cond <= kMaxConstraintCondition)) {
    std::ostringstream os;
    os << "wlcmp_solve: constraint set is rank deficient (Gram condition " << cond << ")";
    throw RankDeficientError(os.str(), cond);
  }
  const CMatrix x = linalg::hermitian_solve(r, c, ridge);  // R^{-1} C
  const HermitianMatrix s(c.adjoint() * x);                 // C^H R^{-1} C
  const CVector y = linalg::hermitian_solve(s, p, 0.0);
  return x * y;
}

std::size_t Diagnostics::fallback_bins() const {
  return static_cast<std::size_t>(std::count_if(bins.begin(), bins.end(), [](const auto& b) { return b.fallback; }));
}

double Diagnostics::max_constraint_residual() const {
  double worst = 0;
  for (const auto& b : bins) {
    if (!b.fallback) worst = std::max(worst, b.constraint_residual);
  }
  return worst;
}

namespace {

std::span<const double> mask_column(const MaskPlane& plane, std::size_t bin) {
  return {plane.col(static_cast<Eigen::Index>(bin)).data(), static_cast<std::size_t>(plane.rows())};
}

void check_masks(const stft::MultichannelSpectrogram& spec, const MaskPlane& target,
                 std::span<const MaskPlane> interferers) {
  auto check = [&](const MaskPlane& m) {
    if (static_cast<std::size_t>(m.rows()) != spec.frames() || static_cast<std::size_t>(m.cols()) != spec.bins()) {
      std::ostringstream os;
      os << "beamformer: mask is " << m.rows() << "x" << m.cols() << ", spectrogram has " << spec.frames()
         << " frames and " << spec.bins() << " bins";
      throw InvalidArgument(os.str());
    }
  };
  check(target);
  for (const auto& m : interferers) check(m);
}

// |q^H a - 1| for one column, max |C^H q - p| otherwise.
double residual(const CVector& q, const CMatrix& c, const CVector& p) {
  const CVector response = c.adjoint() * q;
  return (response - p).cwiseAbs().maxCoeff();
}

CVector responses(std::size_t interferers, double delta) {
  CVector p = CVector::Constant(static_cast<Eigen::Index>(interferers + 1), Complex(delta, 0.0));
  p(0) = 1.0;
  return p;
}

BeamformerOutput make_output(const stft::MultichannelSpectrogram& spec) {
  BeamformerOutput out;
  out.z = stft::MultichannelSpectrogram(1, spec.frames(), spec.bins());
  out.filters.resize(spec.bins());
  out.diagnostics.bins.resize(spec.bins());
  return out;
}

void passthrough(BeamformerOutput& out, const stft::MultichannelSpectrogram& spec, std::size_t bin,
                 std::size_t reference_mic, int iteration, const std::string& why) {
  const auto m = static_cast<Eigen::Index>(spec.channels());
  BinFilter& filter = out.filters[bin];
  filter = BinFilter{};
  filter.q = CVector::Unit(m, static_cast<Eigen::Index>(reference_mic));
  out.z.bin(bin) = spec.bin(bin).row(static_cast<Eigen::Index>(reference_mic));
  auto& diag = out.diagnostics.bins[bin];
  diag.fallback = true;
  diag.failed_iteration = iteration;
  diag.failure = why;
  diag.constraint_residual = 0;
}

[[noreturn]] void rethrow_with_context(const Error& e, std::size_t bin, int iteration) {
  std::ostringstream os;
  os << "bin " << bin << ", iteration " << iteration << ": " << e.what();
  throw Error(os.str());
}

void check_reference(const stft::MultichannelSpectrogram& spec, const ConvBeamformerConfig& cfg) {
  if (cfg.reference_mic >= spec.channels()) throw InvalidArgument("beamformer: reference microphone out of range");
  if (spec.channels() == 0 || spec.frames() == 0) throw InvalidArgument("beamformer: empty spectrogram");
}

}  // namespace

BeamformerOutput run_conv_beamformer(const stft::MultichannelSpectrogram& spec,
                                     const stft::StftConfig& stft_cfg, const MaskPlane& target,
                                     std::span<const MaskPlane> interferers,
                                     const ConvBeamformerConfig& cfg, Mode mode) {
  cfg.validate();
  check_reference(spec, cfg);
  check_masks(spec, target, interferers);
  if (stft_cfg.num_bins() != spec.bins()) throw InvalidArgument("beamformer: STFT config does not match spectrogram");
  const std::size_t used_interferers = mode == Mode::kWlcmp ? interferers.size() : 0;
  const CVector p = responses(used_interferers, cfg.delta);
  BeamformerOutput out = make_output(spec);

  parallel_for(spec.bins(), [&](std::size_t f) {
    int iteration = 0;
    try {
      const StackedObservation obs =
          stack_observations(spec, f, cfg.filter_length(stft_cfg.bin_frequency(f)), cfg.delay);
      const auto k = obs.current.cols();
      const RVector frame_power = obs.current.colwise().squaredNorm().transpose();
      const double mean_power = frame_power.mean();
      if (!(mean_power > 0)) throw DegenerateMaskError("silent frequency bin");
      const double floor = cfg.lambda_floor * mean_power;
      std::vector<double> lambda(static_cast<std::size_t>(k));
      for (Eigen::Index i = 0; i < k; ++i) lambda[static_cast<std::size_t>(i)] = std::max(frame_power(i), floor);

      auto& diag = out.diagnostics.bins[f];
      BinFilter& filter = out.filters[f];
      filter.taps = obs.taps;
      filter.delay = obs.delay;
      CMatrix constraints;
      Eigen::RowVectorXcd z;
      for (iteration = 1; iteration <= cfg.iterations; ++iteration) {
        RVector inv(k);
        for (Eigen::Index i = 0; i < k; ++i) inv(i) = 1.0 / lambda[static_cast<std::size_t>(i)];
        const double scale = 1.0 / static_cast<double>(k);
        const HermitianMatrix r_delayed(weighted_gram(obs.delayed, inv, scale));
        const CMatrix cross = scale * ((obs.delayed * inv.asDiagonal()) * obs.current.adjoint());
        filter.g = linalg::hermitian_solve(r_delayed, cross, cfg.ridge);
        const CMatrix d = dereverberate(obs, filter.g);

        if (iteration == 1 || cfg.refresh_retf) {
          constraints.resize(d.rows(), static_cast<Eigen::Index>(used_interferers + 1));
          constraints.col(0) = estimate_retf(d, mask_column(target, f), cfg.reference_mic, cfg.ridge);
          for (std::size_t u = 0; u < used_interferers; ++u) {
            constraints.col(static_cast<Eigen::Index>(u + 1)) =
                estimate_retf(d, mask_column(interferers[u], f), cfg.reference_mic, cfg.ridge);
          }
        }
        const HermitianMatrix r_d(weighted_gram(d, inv, scale));
        filter.q = wlcmp_solve(r_d, constraints, p, cfg.ridge);
        z = filter.q.adjoint() * d;

        double objective = 0;
        for (Eigen::Index i = 0; i < k; ++i) {
          const double power = std::norm(z(i));
          const double v = std::max(power, floor);
          lambda[static_cast<std::size_t>(i)] = v;
          objective += std::log(v) + power / v;
        }
        diag.objective.push_back(objective / static_cast<double>(k));
      }
      if (!z.allFinite()) throw SingularMatrixError("non-finite beamformer output");
      out.z.bin(f) = z;
      diag.constraint_residual = residual(filter.q, constraints, p);
    } catch (const Error& e) {
      if (cfg.strict) rethrow_with_context(e, f, iteration);
      passthrough(out, spec, f, cfg.reference_mic, iteration, e.what());
    }
  });
  return out;
}

namespace {

// Shared core of MPDR / LCMP / MVDR / LCMV: instantaneous filters from a
// per-bin covariance and constraint set.
template <typename Setup>
BeamformerOutput instantaneous(const stft::MultichannelSpectrogram& spec, const ConvBeamformerConfig& cfg,
                               Setup&& setup) {
  check_reference(spec, cfg);
  BeamformerOutput out = make_output(spec);
  parallel_for(spec.bins(), [&](std::size_t f) {
    try {
      const auto y = spec.bin(f);
      HermitianMatrix r;
      CMatrix c;
      CVector p;
      setup(f, y, r, c, p);
      BinFilter& filter = out.filters[f];
      filter.q = wlcmp_solve(r, c, p, cfg.ridge);
      const Eigen::RowVectorXcd z = filter.q.adjoint() * y;
      if (!z.allFinite()) throw SingularMatrixError("non-finite beamformer output");
      out.z.bin(f) = z;
      out.diagnostics.bins[f].constraint_residual = residual(filter.q, c, p);
    } catch (const Error& e) {
      if (cfg.strict) rethrow_with_context(e, f, 0);
      passthrough(out, spec, f, cfg.reference_mic, 0, e.what());
    }
  });
  return out;
}

HermitianMatrix sample_covariance(const Eigen::Map<const CMatrix>& y) {
  return HermitianMatrix(y * y.adjoint() / static_cast<double>(y.cols()));
}

}  // namespace

BeamformerOutput mpdr(const stft::MultichannelSpectrogram& spec, const MaskPlane& target,
                      const ConvBeamformerConfig& cfg) {
  check_masks(spec, target, {});
  return instantaneous(spec, cfg, [&](std::size_t f, const Eigen::Map<const CMatrix>& y, HermitianMatrix& r,
                                      CMatrix& c, CVector& p) {
    r = sample_covariance(y);
    c = estimate_retf(y, mask_column(target, f), cfg.reference_mic, cfg.ridge);
    p = responses(0, 0.0);
  });
}

BeamformerOutput lcmp(const stft::MultichannelSpectrogram& spec, const MaskPlane& target,
                      std::span<const MaskPlane> interferers, double delta, const ConvBeamformerConfig& cfg) {
  if (!(delta >= 0)) throw ConfigError("lcmp: delta must be nonnegative");
  check_masks(spec, target, interferers);
  return instantaneous(spec, cfg, [&](std::size_t f, const Eigen::Map<const CMatrix>& y, HermitianMatrix& r,
                                      CMatrix& c, CVector& p) {
    r = sample_covariance(y);
    c.resize(y.rows(), static_cast<Eigen::Index>(interferers.size() + 1));
    c.col(0) = estimate_retf(y, mask_column(target, f), cfg.reference_mic, cfg.ridge);
    for (std::size_t u = 0; u < interferers.size(); ++u) {
      c.col(static_cast<Eigen::Index>(u + 1)) = estimate_retf(y, mask_column(interferers[u], f), cfg.reference_mic, cfg.ridge);
    }
    p = responses(interferers.size(), delta);
  });
}

BeamformerOutput mvdr_lcmv_supplied(const stft::MultichannelSpectrogram& spec,
                                    std::span<const CMatrix> steering,
                                    std::span<const HermitianMatrix> noise_cov,
                                    std::optional<double> delta, const ConvBeamformerConfig& cfg) {
  if (steering.size() != spec.bins() || noise_cov.size() != spec.bins()) {
    throw InvalidArgument("mvdr_lcmv_supplied: one steering matrix and covariance per bin required");
  }
  if (delta && !(*delta >= 0)) throw ConfigError("mvdr_lcmv_supplied: delta must be nonnegative");
  for (std::size_t f = 0; f < spec.bins(); ++f) {
    if (steering[f].rows() != static_cast<Eigen::Index>(spec.channels()) || steering[f].cols() < 1 ||
        noise_cov[f].dim() != static_cast<Eigen::Index>(spec.channels())) {
      throw InvalidArgument("mvdr_lcmv_supplied: steering/covariance dimensions differ from channel count");
    }
  }
  return instantaneous(spec, cfg, [&](std::size_t f, const Eigen::Map<const CMatrix>&, HermitianMatrix& r,
                                      CMatrix& c, CVector& p) {
    r = noise_cov[f];
    if (delta && steering[f].cols() > 1) {
      c = steering[f];
      p = responses(static_cast<std::size_t>(c.cols() - 1), *delta);
    } else {
      c = steering[f].col(0);
      p = responses(0, 0.0);
    }
  });
}

stft::MultichannelSpectrogram apply_filters(std::span<const BinFilter> filters,
                                            const stft::MultichannelSpectrogram& spec) {
  if (filters.size() != spec.bins()) throw InvalidArgument("apply_filters: one filter per bin required");
  stft::MultichannelSpectrogram out(1, spec.frames(), spec.bins());
  for (std::size_t f = 0; f < spec.bins(); ++f) {
    const BinFilter& filter = filters[f];
    if (filter.q.size() != static_cast<Eigen::Index>(spec.channels())) {
      throw InvalidArgument("apply_filters: filter dimension differs from channel count");
    }
    if (filter.taps == 0) {
      out.bin(f) = filter.q.adjoint() * spec.bin(f);
    } else {
      const auto obs = stack_observations(spec, f, filter.taps, filter.delay);
      out.bin(f) = filter.q.adjoint() * dereverberate(obs, filter.g);
    }
  }
  return out;
}

}  // namespace cbf::beamform
