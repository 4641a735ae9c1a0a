#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cbf/common.hpp"

namespace cbf::aad {

class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "undefined_correlation"; }
};

// Sub-rate envelope samples e[l]; nonnegative for extracted envelopes.
struct Envelope {
  std::vector<double> samples;
  double rate = 64.0;
  std::string tag;

  std::size_t size() const { return samples.size(); }
};

struct EnvelopeConfig {
  double cutoff_hz = 8.0;
  double rate_out = 64.0;
};

// |x| -> 2nd-order Butterworth low-pass run forward and backward -> resample.
// Integer rate ratios decimate, others interpolate linearly.
Envelope extract_envelope(std::span<const double> signal, double rate_in, const EnvelopeConfig& cfg = {});

struct DecoderConfig {
  double lag_min_ms = 0.0;
  double lag_max_ms = 250.0;
  double ridge = 100.0;   // relative to the mean per-sample feature power
  bool zscore = true;     // per-trial, per-channel
  double rate = 64.0;

  void validate() const;
  std::size_t lag_offset() const;  // first lag in samples
  std::size_t lag_count() const;
};

// ê[l] = sum_c sum_j weights(c, j) eeg(c, l + offset + j)
struct Decoder {
  RMatrix weights;  // C x T
  std::size_t offset = 0;
  double lag_min_ms = 0.0;
  double lag_max_ms = 250.0;
  double rate = 64.0;
  double ridge_abs = 0.0;  // penalty actually applied
  bool zscore = true;

  std::size_t channels() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t lags() const { return static_cast<std::size_t>(weights.cols()); }
  // Samples at the end of an EEG record with no full lag window.
  std::size_t span() const { return offset + lags() - 1; }
};

// Zero-mean, unit-variance rows; constant rows become zero.
RMatrix zscore_channels(const RMatrix& eeg);

// N x (C T) lagged design, N = L - offset - T + 1; column c * T + j holds
// eeg(c, l + offset + j).
RMatrix design_matrix(const RMatrix& eeg, std::size_t offset, std::size_t lags);

// Ridge regression of the mean-removed attended envelopes on the lagged
// (z-scored) EEG, pooled over trials. Envelope l pairs with EEG sample l.
Decoder train_decoder(std::span<const RMatrix> eeg_trials, std::span<const Envelope> attended,
                      const DecoderConfig& cfg = {});

// Output has L - decoder.span() samples.
Envelope reconstruct_envelope(const RMatrix& eeg, const Decoder& decoder);

double pearson(std::span<const double> a, std::span<const double> b);

struct Selection {
  std::size_t index = 0;
  std::vector<double> correlations;  // NaN where excluded
  std::vector<bool> excluded;
  bool tie = false;
};

// argmax of pearson(candidate, reconstructed), each candidate truncated to
// the reconstruction length. Lowest index wins ties. Candidates with
// undefined correlation are excluded; if none remain the error propagates.
Selection select_speaker(std::span<const Envelope> candidates, const Envelope& reconstructed);

struct EegSynthConfig {
  double leakage = 0.3;        // unattended weight relative to attended
  double latency_ms = 100.0;   // peak of the response kernel
  double kernel_width_ms = 30.0;
};

// C x L EEG: per channel, a fixed random weight times the kernel-filtered
// attended envelope, a weaker random weight times the unattended one, and
// kernel-filtered Gaussian noise at snr_db relative to that channel's signal
// power. The weights depend only on mixing_seed (one simulated listener), the noise
// only on noise_seed.
RMatrix synthesize_eeg(const Envelope& attended, const Envelope& unattended, std::size_t channels,
                       double snr_db, std::uint64_t mixing_seed, std::uint64_t noise_seed,
                       const EegSynthConfig& cfg = {});

struct Trial {
  RMatrix eeg;                      // C x L
  std::vector<Envelope> candidates; // reference envelopes, L samples each
  std::size_t attended = 0;
  double duration_s = 30.0;
};

struct TrialSet {
  std::vector<Trial> trials;
  double rate = 64.0;
};

// [begin, end) sample ranges of consecutive trials; a short tail is dropped.
std::vector<std::pair<std::size_t, std::size_t>> trial_ranges(std::size_t length, double rate,
                                                              double trial_s = 30.0);

}  // namespace cbf::aad
