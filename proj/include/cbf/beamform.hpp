#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbf/common.hpp"
#include "cbf/linalg.hpp"
#include "cbf/masks.hpp"
#include "cbf/stft.hpp"

namespace cbf::beamform {

using linalg::HermitianMatrix;
using masks::MaskPlane;

// Dereverberation filter length for bins with frequency in [lo_hz, hi_hz).
struct FilterBand {
  double lo_hz = 0;
  double hi_hz = std::numeric_limits<double>::infinity();
  std::size_t taps = 8;
};

struct ConvBeamformerConfig {
  std::size_t delay = 4;  // prediction delay b in frames
  std::vector<FilterBand> bands = {
      {0.0, 800.0, 20}, {800.0, 1500.0, 16}, {1500.0, std::numeric_limits<double>::infinity(), 8}};
  int iterations = 10;
  double delta = 0.1;           // response to every interferer RETF
  double lambda_floor = 1e-10;  // relative to the bin's mean frame power
  double ridge = linalg::kDefaultRidge;
  std::size_t reference_mic = 0;
  bool strict = false;          // rethrow per-bin failures instead of falling back
  bool refresh_retf = false;    // true re-estimates RETFs every iteration instead of keeping the first estimates

  // Throws ConfigError on b < 1, L_w <= b, iterations < 1, delta < 0 or a
  // non-positive lambda floor.
  void validate() const;
  // Frequencies past the last band use the last band's length.
  std::size_t filter_length(double freq_hz) const;
};

// Per-frame current vector y_k and delayed stack
// y~_k = [y_{k-b}; ...; y_{k-L_w+1}], zero where k - tau < 0.
struct StackedObservation {
  CMatrix current;  // M x K
  CMatrix delayed;  // M (L_w - b) x K
  std::size_t taps = 0;
  std::size_t delay = 0;

  std::size_t frames() const { return static_cast<std::size_t>(current.cols()); }
  // y-bar_k = [y_k; y~_k], M (L_w - b + 1) x K
  CMatrix stacked() const;
};

StackedObservation stack_observations(const stft::MultichannelSpectrogram& spec, std::size_t bin,
                                      std::size_t taps, std::size_t delay);
StackedObservation stack_observations(const stft::MultichannelSpectrogram& spec, std::size_t bin,
                                      const ConvBeamformerConfig& cfg, const stft::StftConfig& stft_cfg);

// lambda-weighted sample correlations averaged over the K frames.
struct WeightedCorrelations {
  HermitianMatrix delayed;  // R_y~ = 1/K sum y~ y~^H / lambda
  CMatrix cross;            // P_y~ = 1/K sum y~ y^H / lambda
  HermitianMatrix stacked;  // R-bar = 1/K sum y-bar y-bar^H / lambda
};

WeightedCorrelations weighted_correlations(const StackedObservation& obs, std::span<const double> lambda);

// d_k = y_k - G^H y~_k, returned as M x K.
CMatrix dereverberate(const StackedObservation& obs, const CMatrix& g);

// Covariance whitening: a = R_n MaxEig(R_n^{-1} R_t), scaled so that
// a(reference_mic) = 1. R_n is diagonally loaded by `ridge`.
CVector retf_from_covariances(const HermitianMatrix& target, const HermitianMatrix& rest,
                              std::size_t reference_mic, double ridge);

// Mask-weighted covariances R_t (weights gamma) and R_n (weights 1 - gamma)
// of the M x K frames, then retf_from_covariances. Throws
// DegenerateMaskError if either weight sum or covariance vanishes.
CVector estimate_retf(const CMatrix& frames, std::span<const double> mask, std::size_t reference_mic,
                      double ridge);

// q = R^{-1} a / (a^H R^{-1} a)
CVector wmpdr_solve(const HermitianMatrix& r, const CVector& a, double ridge);

// q = R^{-1} C (C^H R^{-1} C)^{-1} p. A single-column C is delegated to
// wmpdr_solve. Throws RankDeficientError for nearly parallel columns.
CVector wlcmp_solve(const HermitianMatrix& r, const CMatrix& c, const CVector& p, double ridge);

inline constexpr double kMaxConstraintCondition = 1e10;

enum class Mode { kWmpdr, kWlcmp };

// Final filter of one bin: z_k = q^H (y_k - G^H y~_k). taps == 0 means an
// instantaneous beamformer (G empty).
struct BinFilter {
  CMatrix g;
  CVector q;
  std::size_t taps = 0;
  std::size_t delay = 0;
};

struct BinDiagnostics {
  std::vector<double> objective;  // 1/K sum(ln lambda_k + |z_k|^2 / lambda_k), per iteration
  double constraint_residual = 0;
  bool fallback = false;
  int failed_iteration = -1;
  std::string failure;
};

struct Diagnostics {
  std::vector<BinDiagnostics> bins;

  std::size_t fallback_bins() const;
  double max_constraint_residual() const;
};

struct BeamformerOutput {
  stft::MultichannelSpectrogram z;  // one channel, K x F
  std::vector<BinFilter> filters;
  Diagnostics diagnostics;
};

// Per bin: cfg.iterations rounds of weighted correlations, G = R_y~^{-1} P_y~,
// dereverberation, RETF estimation (target, and interferers for wLCMP),
// beamformer solve, z_k = q^H d_k and lambda_k = max(|z_k|^2, floor).
// lambda starts at ||y_k||^2. A bin whose solve fails passes the reference
// microphone through unless cfg.strict.
BeamformerOutput run_conv_beamformer(const stft::MultichannelSpectrogram& spec,
                                     const stft::StftConfig& stft_cfg, const MaskPlane& target,
                                     std::span<const MaskPlane> interferers,
                                     const ConvBeamformerConfig& cfg, Mode mode);

// Non-iterative MPDR on the unweighted R_y with a reverberant RTF from y_k.
BeamformerOutput mpdr(const stft::MultichannelSpectrogram& spec, const MaskPlane& target,
                      const ConvBeamformerConfig& cfg);

// LCMP counterpart with interferer RTFs and response delta.
BeamformerOutput lcmp(const stft::MultichannelSpectrogram& spec, const MaskPlane& target,
                      std::span<const MaskPlane> interferers, double delta, const ConvBeamformerConfig& cfg);

// MVDR (no delta or a single steering column) or LCMV with caller-supplied
// per-bin steering (M x (1 + U), target first) and noise covariance.
BeamformerOutput mvdr_lcmv_supplied(const stft::MultichannelSpectrogram& spec,
                                    std::span<const CMatrix> steering,
                                    std::span<const HermitianMatrix> noise_cov,
                                    std::optional<double> delta, const ConvBeamformerConfig& cfg);

// Applies stored filters to another spectrogram with the same shape,
// e.g. a single oracle component of the mixture.
stft::MultichannelSpectrogram apply_filters(std::span<const BinFilter> filters,
                                            const stft::MultichannelSpectrogram& spec);

}  // namespace cbf::beamform
